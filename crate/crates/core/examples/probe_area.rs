use gridflow::controller::{self, ControllerConfig, ControllerKind};
use gridflow::dynamics::{ClosedLoop, TurbineModelKind};
use gridflow::network::{load_grid, solve_equilibrium};

fn main() {
    let grid = load_grid("crates/core/fixtures/four_bus.grid").unwrap();
    let eqn = solve_equilibrium(&grid, &grid.nominal_injections()).unwrap();
    println!("pre-dist flows: {:?}", eqn.flows);
    let mut cfg = ControllerConfig::new(&grid, ControllerKind::Uc);
    cfg.load_side = vec![true; 4];
    cfg.area_control = true;
    cfg.k_lambda = vec![0.5; 4];
    cfg.k_phi = vec![2.0; 4];
    cfg.k_rho_plus = vec![0.5; 3];
    cfg.k_rho_minus = vec![0.5; 3];
    cfg.k_pi = vec![0.5; 2];
    let loop_ = ClosedLoop::new(&grid, &cfg, TurbineModelKind::SecondOrder);
    let (phys, ctrl) = loop_.initial_state(&eqn.theta);
    let mut x = loop_.pack(&phys, &ctrl);
    let mut r = vec![0.0; 4];
    let h = 1e-3;
    for k in 0..400_000 {
        let t = k as f64 * h;
        if t >= 0.5 {
            r[3] = -0.3;
        }
        loop_.step(&mut x, &r, t, h).unwrap();
    }
    let (mut p, c) = loop_.unpack(&x);
    loop_.resolve_algebraic(&mut p, &c, &r).unwrap();
    let p_hat = controller::virtual_flows(&grid, &c.phi);
    for (k, area) in grid.areas.iter().enumerate() {
        let export: f64 = area.ties.iter().map(|&(e, s)| s * p_hat[e]).sum();
        println!(
            "area {}: virtual export {:+.8} vs schedule {:+.3} (pi = {:+.5})",
            area.id, export, area.schedule, c.pi[k]
        );
    }
    let flows = gridflow::network::line_flows(&grid, &p.theta);
    println!("final flows {:?}", flows);
    println!("max|omega| {:.2e}", p.omega.iter().fold(0.0f64, |a, w| a.max(w.abs())));
    println!("lambda {:?}", c.lambda);
}
