use patchy::system::ControlSystem;
use patchy::value::{domain_bound, solve_value_function, oracle_error_on_mask, GridSpec};
use patchy::math::norm;

fn main() {
    let sys = ControlSystem::benchmark("single-integrator-2d", 16).unwrap();
    for res in [101usize, 201] {
        for cfl in [0.5, 1.0, 2.0, 3.0, 4.0] {
            let spec = GridSpec { resolution: res, radius: domain_bound(0.5,1.0,2.01), cfl, tol: 1e-6, max_sweeps: 10000 };
            let t0 = std::time::Instant::now();
            let g = solve_value_function(&sys, 0.5, 2.01, &spec).unwrap();
            let mut mask = vec![false; g.node_count()];
            let mut y = vec![0.0; 2];
            let mut signed_max: f64 = 0.0; let mut signed_min: f64 = 0.0;
            for i in 0..g.node_count() {
                g.node_point(i, &mut y);
                if g.values[i] <= 1.0 && norm(&y) >= 0.5 { mask[i] = true;
                    let e = g.values[i] - patchy::value::single_integrator_oracle(norm(&y), 0.5);
                    signed_max = signed_max.max(e); signed_min = signed_min.min(e);
                }
            }
            let err = oracle_error_on_mask(&g, &mask);
            println!("res={res} cfl={cfl}: err={err:.4} (+{signed_max:.4}/{signed_min:.4}) sweeps={} {:.2}s", g.sweeps, t0.elapsed().as_secs_f64());
        }
    }
}
