use gridflow::controller::{ControllerConfig, ControllerKind};
use gridflow::dynamics::{ClosedLoop, TurbineModelKind};
use gridflow::network::{load_grid, solve_equilibrium};

fn main() {
    let grid = load_grid("crates/core/fixtures/ne39.grid").unwrap();
    let eqn = solve_equilibrium(&grid, &grid.nominal_injections()).unwrap();
    let bus34 = grid.bus_by_id(34).unwrap();
    let bus38 = grid.bus_by_id(38).unwrap();
    for kind in [ControllerKind::Uc, ControllerKind::Duc] {
        let mut cfg = ControllerConfig::new(&grid, kind);
        cfg.load_side = vec![true; grid.n_buses()];
        cfg.k_lambda = vec![0.0477; grid.n_buses()];
        cfg.k_phi = vec![37.6991; grid.n_buses()];
        cfg.k_rho_plus = vec![0.0013; grid.n_lines()];
        cfg.k_rho_minus = vec![0.0013; grid.n_lines()];
        let loop_ = ClosedLoop::new(&grid, &cfg, TurbineModelKind::SecondOrder);
        let (phys, ctrl) = loop_.initial_state(&eqn.theta);
        let mut x = loop_.pack(&phys, &ctrl);
        let h = 1e-3;
        let mut r = vec![0.0; grid.n_buses()];
        let mut lam34 = Vec::new();
        let mut max_omega_end = 0.0_f64;
        for k in 0..200_000 {
            let t = k as f64 * h;
            if (t - 1.0).abs() < h / 2.0 {
                r[bus38] = -7.35;
            }
            loop_.step(&mut x, &r, t, h).unwrap();
            if k % 10 == 0 {
                let (mut p, c) = loop_.unpack(&x);
                loop_.resolve_algebraic(&mut p, &c, &r).unwrap();
                lam34.push(c.lambda[bus34]);
                if t > 195.0 {
                    max_omega_end = max_omega_end
                        .max(p.omega.iter().fold(0.0_f64, |a, w| a.max(w.abs())));
                }
            }
        }
        let p2p = |w: &[f64]| {
            w.iter().cloned().fold(f64::MIN, f64::max) - w.iter().cloned().fold(f64::MAX, f64::min)
        };
        let n = lam34.len();
        let last = p2p(&lam34[n - 2500..]);
        let prev = p2p(&lam34[n - 5000..n - 2500]);
        println!(
            "{}: lambda34 final {:+.4}, p2p last {:.4} prev {:.4} ratio {:.3}, max|omega| end {:.2e}",
            kind.as_str(),
            lam34[n - 1],
            last,
            prev,
            last / prev,
            max_omega_end
        );
    }
}
