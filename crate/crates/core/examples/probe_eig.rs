use gridflow::controller::{ControllerConfig, ControllerKind};
use gridflow::dynamics::{ClosedLoop, TurbineModelKind};
use gridflow::network::{load_grid, solve_equilibrium};
use gridflow::stability::{gain_sweep, ActiveSet, EquilibriumPoint};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(|s| s.as_str()).unwrap_or("crates/core/fixtures/ne39_allgen.grid");
    let grid = load_grid(path).unwrap();
    let eqn = solve_equilibrium(&grid, &grid.nominal_injections()).unwrap();
    let scales = [0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0];
    for (kind, turbine) in [
        (ControllerKind::Uc, TurbineModelKind::FirstOrder),
        (ControllerKind::Uc, TurbineModelKind::SecondOrder),
        (ControllerKind::Duc, TurbineModelKind::SecondOrder),
    ] {
        let mut cfg = ControllerConfig::new(&grid, kind);
        cfg.k_lambda = vec![0.0477; grid.n_buses()];
        cfg.k_phi = vec![37.6991; grid.n_buses()];
        cfg.k_rho_plus = vec![0.0013; grid.n_lines()];
        cfg.k_rho_minus = vec![0.0013; grid.n_lines()];
        let loop_ = ClosedLoop::new(&grid, &cfg, turbine);
        let (phys, ctrl) = loop_.initial_state(&eqn.theta);
        let eq = EquilibriumPoint { phys, ctrl, r: vec![0.0; grid.n_buses()] };
        let active = ActiveSet::all_inactive(&grid);
        print!("{:?} {:?}: ", kind, turbine);
        for (s, res) in gain_sweep(&grid, &cfg, turbine, &eq, &active, &scales) {
            match res {
                Ok(a) => print!("{s}:{a:+.4e}  "),
                Err(e) => print!("{s}:ERR({e})  "),
            }
        }
        println!();
    }
}
