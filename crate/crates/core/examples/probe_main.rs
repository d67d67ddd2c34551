use gridflow::controller::{ControllerConfig, ControllerKind};
use gridflow::dynamics::{ClosedLoop, TurbineModelKind};
use gridflow::network::{load_grid, solve_equilibrium};
use gridflow::stability::{eigenvalues, linearize, ActiveSet, EquilibriumPoint};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(|s| s.as_str()).unwrap_or("crates/core/fixtures/ne39.grid");
    let grid = load_grid(path).unwrap();
    let eqn = solve_equilibrium(&grid, &grid.nominal_injections()).unwrap();
    for (kind, turbine) in [
        (ControllerKind::Droop, TurbineModelKind::SecondOrder),
        (ControllerKind::Agc, TurbineModelKind::SecondOrder),
        (ControllerKind::Uc, TurbineModelKind::FirstOrder),
        (ControllerKind::Uc, TurbineModelKind::SecondOrder),
        (ControllerKind::Duc, TurbineModelKind::SecondOrder),
    ] {
        let mut cfg = ControllerConfig::new(&grid, kind);
        if std::env::args().nth(2).as_deref() == Some("ls") {
            cfg.load_side = vec![true; grid.n_buses()];
        }
        let scale: f64 = std::env::var("GF_SCALE").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
        cfg.k_lambda = vec![0.0477 * scale; grid.n_buses()];
        cfg.k_phi = vec![37.6991 * scale; grid.n_buses()];
        cfg.k_rho_plus = vec![0.0013 * scale; grid.n_lines()];
        cfg.k_rho_minus = vec![0.0013 * scale; grid.n_lines()];
        let loop_ = ClosedLoop::new(&grid, &cfg, turbine);
        let (phys, ctrl) = loop_.initial_state(&eqn.theta);
        let eq = EquilibriumPoint { phys, ctrl, r: vec![0.0; grid.n_buses()] };
        let active = ActiveSet::all_inactive(&grid);
        match linearize(&grid, &cfg, turbine, &eq, &active).and_then(|m| eigenvalues(&m)) {
            Ok(rep) => println!(
                "{:>5} {:<12} abscissa {:+.4e}  unstable {}",
                kind.as_str(),
                turbine.as_str(),
                rep.spectral_abscissa,
                rep.n_unstable
            ),
            Err(e) => println!("{:>5} {:<12} ERR {e}", kind.as_str(), turbine.as_str()),
        }
    }
}
