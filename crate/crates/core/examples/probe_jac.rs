use gridflow::controller::{ControllerConfig, ControllerKind};
use gridflow::dynamics::{ClosedLoop, TurbineModelKind};
use gridflow::network::{load_grid, solve_equilibrium};
use gridflow::stability::{fd_jacobian, linearize, ActiveSet, EquilibriumPoint};

fn main() {
    for path in ["crates/core/fixtures/ne39.grid"] {
        let grid = load_grid(path).unwrap();
        let eqn = solve_equilibrium(&grid, &grid.nominal_injections()).unwrap();
        for kind in [
            ControllerKind::Uc,
            ControllerKind::Duc,
            ControllerKind::Agc,
            ControllerKind::Droop,
        ] {
            for turbine in [TurbineModelKind::SecondOrder, TurbineModelKind::FirstOrder] {
                for load_side in [false, true] {
                    let mut cfg = ControllerConfig::new(&grid, kind);
                    cfg.load_side = vec![load_side; grid.n_buses()];
                    cfg.k_lambda = vec![0.0477; grid.n_buses()];
                    cfg.k_phi = vec![37.6991; grid.n_buses()];
                    cfg.k_rho_plus = vec![0.0013; grid.n_lines()];
                    cfg.k_rho_minus = vec![0.0013; grid.n_lines()];
                    let loop_ = ClosedLoop::new(&grid, &cfg, turbine);
                    let (phys, ctrl) = loop_.initial_state(&eqn.theta);
                    let eq = EquilibriumPoint { phys, ctrl, r: vec![0.0; grid.n_buses()] };
                    let active = ActiveSet::from_equilibrium(&grid, &cfg, &eq);
                    let model = match linearize(&grid, &cfg, turbine, &eq, &active) {
                        Ok(m) => m,
                        Err(e) => {
                            println!("{path} {kind:?} {turbine:?} ls={load_side}: linearize ERR {e}");
                            continue;
                        }
                    };
                    let fd = fd_jacobian(&grid, &cfg, turbine, &eq, &active, 1e-6).unwrap();
                    let mut worst = 0.0_f64;
                    let mut wrc = (0, 0);
                    for i in 0..model.dim() {
                        for j in 0..model.dim() {
                            let d = (model.a[(i, j)] - fd[(i, j)]).abs();
                            if d > worst {
                                worst = d;
                                wrc = (i, j);
                            }
                        }
                    }
                    let norm = model.a.amax();
                    println!(
                        "{path} {kind:?} {turbine:?} ls={load_side}: dim={} rel_err={:.3e} at ({}, {}) [{} <- {}]",
                        model.dim(),
                        worst / norm,
                        wrc.0,
                        wrc.1,
                        model.labels[wrc.0],
                        model.labels[wrc.1]
                    );
                }
            }
        }
    }
}
