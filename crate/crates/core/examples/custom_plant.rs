//! Any type implementing `Plant` can be driven by the controller. Here the
//! coupled plant gets an actuator that saturates at 1.5 and a constant output
//! bias the library never saw.

use deepc::deepc::{run_closed_loop, ClosedLoopSpec, Controller, Plant, SimulatedPlant};
use deepc::experiment::Experiment;
use nalgebra::DVector;

struct Saturated {
    inner: SimulatedPlant,
    limit: f64,
    bias: f64,
}

impl Saturated {
    fn clip(&self, u: &DVector<f64>) -> DVector<f64> {
        u.map(|v| v.clamp(-self.limit, self.limit))
    }
}

impl Plant for Saturated {
    fn inputs(&self) -> usize {
        self.inner.inputs()
    }

    fn outputs(&self) -> usize {
        self.inner.outputs()
    }

    fn output(&self, u: &DVector<f64>) -> DVector<f64> {
        self.inner.output(&self.clip(u)).add_scalar(self.bias)
    }

    fn advance(&mut self, u: &DVector<f64>) {
        let u = self.clip(u);
        self.inner.advance(&u);
    }
}

fn main() -> deepc::Result<()> {
    let exp = Experiment::builtin("out");
    let (u, y) = exp.collect()?;
    let libs = exp.libraries(&u, &y)?;
    let config = exp.config.deepc_config(2, 2)?;

    for bias in [0.0, 0.02] {
        let mut controller = Controller::new(libs.reduced.h_bar.matrix(), config.clone(), exp.config.solver)?;
        let mut plant = Saturated {
            inner: SimulatedPlant::at_rest(exp.plant.clone()),
            limit: 1.5,
            bias,
        };
        let log = run_closed_loop(&mut plant, &mut controller, &ClosedLoopSpec { steps: 60, ..Default::default() }, "saturated")?;
        let last = &log.records.last().unwrap().y;
        println!("bias {bias}: cost {:.3}, final y [{:.4}, {:.4}]", log.accumulated_cost(), last[0], last[1]);
    }
    Ok(())
}
