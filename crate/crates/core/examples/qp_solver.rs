//! The dense dual active-set solver on a small problem, with KKT certificates
//! and a warm start.

use deepc::qp::{kkt_residuals, solve, solve_unconstrained, QpSpec, Settings, WarmStart};
use nalgebra::{dmatrix, dvector};

fn main() -> deepc::Result<()> {
    // min (x0 - 1)^2 + (x1 - 2)^2  s.t.  x0 + x1 <= 2,  x0 >= 0
    let spec = QpSpec::new(
        dmatrix![2.0, 0.0; 0.0, 2.0],
        dvector![-2.0, -4.0],
        dmatrix![1.0, 1.0; -1.0, 0.0],
        dvector![2.0, 0.0],
    )?;
    let settings = Settings::default();
    let sol = solve(&spec, &settings);
    println!("status {:?} after {} iterations", sol.status, sol.iterations);
    println!("x = {:?}, mu = {:?}", sol.x.as_slice(), sol.mu.as_slice());
    println!("objective {:.6}, active set {:?}", sol.objective, sol.active_set);
    println!("residuals {:?}", sol.residuals);
    println!("merit trace {:?}", sol.merit_trace);

    let free = solve_unconstrained(&spec, &settings);
    println!("unconstrained x = {:?}", free.x.as_slice());

    let warm = solve(&spec.clone().with_warm_start(WarmStart::Dual(sol.mu.clone())), &settings);
    println!("warm start: {} iterations, same x: {}", warm.iterations, warm.x == sol.x);

    let off = dvector![0.5, 1.5];
    println!("residuals at a feasible non-optimal point {:?}", kkt_residuals(&spec, &off, &dvector![0.0, 0.0]));

    let infeasible = QpSpec::new(
        dmatrix![1.0],
        dvector![0.0],
        dmatrix![1.0; -1.0],
        dvector![-1.0, -1.0],
    )?;
    println!("x <= -1 and x >= 1: {:?}", solve(&infeasible, &settings).status);
    Ok(())
}
