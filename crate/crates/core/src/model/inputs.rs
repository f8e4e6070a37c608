use nar_autodiff::Tensor;

use crate::error::{Error, Result};
use crate::task::{Location, ProblemInstance, Task};

/// Input features of a batch of same-size instances, stacked per feature
/// and keyed by the path of their encoder.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    pub task: Task,
    pub batch: usize,
    pub n: usize,
    /// `[B, n, 1]` each.
    pub node: Vec<(String, Tensor)>,
    /// `[B, n, n, 1]` each.
    pub edge: Vec<(String, Tensor)>,
    /// `[B, 1]` each.
    pub graph: Vec<(String, Tensor)>,
}

impl BatchInputs {
    pub fn new(instances: &[&ProblemInstance], use_positions: bool) -> Result<Self> {
        let first = instances
            .first()
            .ok_or_else(|| Error::input("batch", "no instances"))?;
        let (task, n, b) = (first.task, first.n, instances.len());
        for inst in instances {
            if inst.task != task || inst.n != n {
                return Err(Error::input(
                    "batch",
                    format!("mixed batch: {} n = {} next to {task} n = {n}", inst.task, inst.n),
                ));
            }
            inst.validate()?;
        }
        let mut out = BatchInputs { task, batch: b, n, node: vec![], edge: vec![], graph: vec![] };
        for f in task.inputs() {
            match f.location {
                Location::Node => {
                    let mut data = Vec::with_capacity(b * n);
                    for inst in instances {
                        data.extend_from_slice(inst.node(f.name)?);
                    }
                    out.node.push((format!("enc.node.{}", f.name), Tensor::new(vec![b, n, 1], data)?));
                }
                Location::Edge => {
                    let mut data = Vec::with_capacity(b * n * n);
                    for inst in instances {
                        data.extend_from_slice(inst.edge(f.name)?);
                    }
                    out.edge.push((format!("enc.edge.{}", f.name), Tensor::new(vec![b, n, n, 1], data)?));
                }
                Location::Graph => {
                    let data = instances.iter().map(|i| i.graph(f.name)).collect::<Result<Vec<_>>>()?;
                    out.graph.push((format!("enc.graph.{}", f.name), Tensor::new(vec![b, 1], data)?));
                }
            }
        }
        if use_positions {
            let pos: Vec<f32> = (0..b).flat_map(|_| (0..n).map(move |i| i as f32 / n as f32)).collect();
            out.node.push(("enc.node.pos".into(), Tensor::new(vec![b, n, 1], pos)?));
        }
        Ok(out)
    }
}
