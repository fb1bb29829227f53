use std::path::PathBuf;

use matchforge::io::{read_tensor, read_tensor_file_all, Tensor};
use matchforge::losses::{
    batch_distance_matrix, hardneg_constant_loss, hardnet_loss, hardnet_loss_grad, BatchDistanceMatrix,
    DescriptorBatch, HardNegPairs,
};
use matchforge::Error;
use serde::Serialize;

use crate::emit;
use crate::error::{CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Either one `2 x n x D` tensor (anchors, positives), two `n x D`
    /// tensors, or one `n x n` distance matrix.
    #[arg(long)]
    input: PathBuf,

    /// Optional `n x 2` tensor of (positive, hardest negative) distances.
    #[arg(long)]
    pairs: Option<PathBuf>,

    /// Finite-difference step for the gradient check.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
}

#[derive(Serialize)]
struct Report {
    n: usize,
    hardnet_loss: f64,
    per_sample: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hardneg_loss: Option<f64>,
    /// Max-norm relative deviation; absent for distance-matrix input.
    #[serde(skip_serializing_if = "Option::is_none")]
    max_grad_deviation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradient_note: Option<String>,
}

enum Input {
    Batch(DescriptorBatch),
    Distances(BatchDistanceMatrix),
}

fn load(path: &PathBuf) -> CliResult<Input> {
    let ts = read_tensor_file_all(path)?;
    let f64s = |t: &Tensor| t.data().iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();
    match ts.as_slice() {
        [t] if t.dims().len() == 3 && t.dims()[0] == 2 => {
            let (n, dim) = (t.dims()[1], t.dims()[2]);
            let data = f64s(t);
            let (a, p) = data.split_at(n * dim);
            Ok(Input::Batch(DescriptorBatch::new(dim, a.to_vec(), p.to_vec())?))
        }
        [t] if t.dims().len() == 2 && t.dims()[0] == t.dims()[1] => {
            let n = t.dims()[0];
            let rows: Vec<Vec<f64>> = f64s(t).chunks(n.max(1)).map(<[f64]>::to_vec).collect();
            Ok(Input::Distances(BatchDistanceMatrix::from_rows(&rows)?))
        }
        [a, p] if a.dims().len() == 2 && a.dims() == p.dims() => {
            Ok(Input::Batch(DescriptorBatch::new(a.dims()[1], f64s(a), f64s(p))?))
        }
        _ => Err(CliError::Data(format!(
            "{}: expected a 2 x n x D tensor, two n x D tensors or an n x n matrix",
            path.display()
        ))),
    }
}

fn loss_of(dim: usize, a: &[f64], p: &[f64]) -> CliResult<f64> {
    let b = DescriptorBatch::new(dim, a.to_vec(), p.to_vec())?;
    Ok(hardnet_loss(&batch_distance_matrix(&b)?)?.loss)
}

/// Largest relative gap between the analytic gradient and central
/// differences, in max norm.
fn gradient_deviation(b: &DescriptorBatch, step: f64) -> CliResult<Result<f64, String>> {
    let g = match hardnet_loss_grad(b) {
        Ok(g) => g,
        Err(Error::NonDifferentiable(i)) => return Ok(Err(format!("tie in the hardest negative of pair {i}"))),
        Err(e) => return Err(e.into()),
    };
    let dim = b.dim();
    let mut numeric = Vec::with_capacity(g.anchors.len() * 2);
    for side in 0..2 {
        let base = if side == 0 { b.anchors() } else { b.positives() };
        for k in 0..base.len() {
            let mut plus = base.to_vec();
            let mut minus = base.to_vec();
            plus[k] += step;
            minus[k] -= step;
            let (lp, lm) = if side == 0 {
                (loss_of(dim, &plus, b.positives())?, loss_of(dim, &minus, b.positives())?)
            } else {
                (loss_of(dim, b.anchors(), &plus)?, loss_of(dim, b.anchors(), &minus)?)
            };
            numeric.push((lp - lm) / (2.0 * step));
        }
    }
    let analytic: Vec<f64> = g.anchors.iter().chain(&g.positives).copied().collect();
    let diff = analytic.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = analytic.iter().chain(&numeric).map(|v| v.abs()).fold(0.0, f64::max);
    Ok(Ok(if scale == 0.0 { 0.0 } else { diff / scale }))
}

pub fn run(args: Args) -> CliResult<()> {
    if !(args.step > 0.0) {
        return Err(CliError::Usage("--step must be positive".into()));
    }
    let input = load(&args.input)?;
    let (d, grad) = match &input {
        Input::Batch(b) => (batch_distance_matrix(b)?, Some(gradient_deviation(b, args.step)?)),
        Input::Distances(d) => (d.clone(), None),
    };
    let loss = hardnet_loss(&d)?;
    let hardneg_loss = match &args.pairs {
        Some(path) => {
            let t = read_tensor(path)?;
            let [_, 2] = t.dims() else {
                return Err(CliError::Data(format!("{}: expected an n x 2 tensor", path.display())));
            };
            let (pos, neg): (Vec<f64>, Vec<f64>) =
                t.data().chunks(2).map(|r| (f64::from(r[0]), f64::from(r[1]))).unzip();
            Some(hardneg_constant_loss(&HardNegPairs::new(pos, neg)?))
        }
        None => None,
    };
    let (max_grad_deviation, gradient_note) = match grad {
        Some(Ok(dev)) => (Some(dev), None),
        Some(Err(note)) => (None, Some(note)),
        None => (None, None),
    };
    let report = Report {
        n: d.len(),
        hardnet_loss: loss.loss,
        per_sample: loss.per_sample,
        hardneg_loss,
        max_grad_deviation,
        gradient_note,
    };
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Invariant(e.to_string()))?;
    json.push('\n');
    emit(None, &json)
}
