//! Finite-difference verification of the network.
//!
//! Layers the composite blocks (attention head, losses, SE, ConvNeXt block,
//! STN, stem, downsampling) and the whole Micro model on top of the
//! per-primitive checks of the tensor crate. Everything runs in `f64`.
//!
//! Non-smooth points (ReLU, max pooling, bilinear cell edges) are avoided
//! by construction where it is cheap: smooth images under the STN and a
//! smaller difference step wherever the sampler is involved.

use std::fmt;

use emonext_tensor::gradcheck::suite::{primitive_checks, PRIMITIVE_TOLERANCE};
use emonext_tensor::gradcheck::{GradCheck, GradCheckReport};
use emonext_tensor::Tensor;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{attention_weights, cross_entropy_smoothed, sa_regularizer, total_loss, Model, Preset};
use crate::nn::{
    convnext_block, downsample_layer, patchify_stem, se_block, stn_forward, BlockParams, DownsampleParams, ParamSpec,
    SEParams, STNParams, StemParams,
};
use crate::params::ParamStore;
use crate::rng::StreamRng;

/// Threshold for the assembled model, whose loss is a deep composition.
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Seeds per primitive or composite check.
pub const SEEDS: usize = 5;

/// Seeds for the assembled model, which is far slower to difference.
pub const MODEL_SEEDS: usize = 2;

/// Finite-difference step for anything involving the STN. Its sampler is
/// only piecewise smooth in the grid and its localization net has tens of
/// thousands of ReLU/max-pool units, so the default `1e-4` step crosses
/// kinks routinely; `1e-6` makes that rare while round-off stays ~1e-10.
const PIECEWISE_EPS: f64 = 1e-6;

/// Elements whose `eps` and `eps/2` differences disagree by more than this
/// are on a kink and skipped (finite differences say nothing there).
const SMOOTH_TOL: f64 = 1e-4;

/// A check that skips more than this fraction of its elements fails:
/// the screen must thin the comparison, not empty it.
pub const MAX_SKIPPED_FRACTION: f64 = 0.25;

/// Elements compared per parameter tensor in the model check.
const MODEL_SAMPLES: usize = 3;

type RunFn = fn(u64) -> emonext_tensor::Result<GradCheckReport>;

#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub tolerance: f64,
    pub seeds: usize,
    run: RunFn,
}

impl fmt::Debug for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Check")
            .field("name", &self.name)
            .field("tolerance", &self.tolerance)
            .field("seeds", &self.seeds)
            .finish()
    }
}

impl Check {
    pub fn run(&self, seed: u64) -> Result<GradCheckReport> {
        Ok((self.run)(seed)?)
    }
}

/// Worst result of one check over all its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub tolerance: f64,
    pub seeds: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_seed: u64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        let total = (self.checked + self.skipped) as f64;
        self.max_rel_error < self.tolerance && self.checked > 0 && (self.skipped as f64) <= MAX_SKIPPED_FRACTION * total
    }
}

/// Every check: primitives, then composites, then the Micro model.
pub fn checks() -> Vec<Check> {
    let mut out: Vec<Check> = primitive_checks()
        .into_iter()
        .map(|c| Check {
            name: c.name,
            tolerance: PRIMITIVE_TOLERANCE,
            seeds: SEEDS,
            run: c.run,
        })
        .collect();
    let composite = |name, run| Check {
        name,
        tolerance: PRIMITIVE_TOLERANCE,
        seeds: SEEDS,
        run,
    };
    out.extend([
        composite("attention_weights", check_attention as RunFn),
        composite("sa_regularizer", check_sa),
        composite("cross_entropy_smoothed", check_ce),
        composite("total_loss", check_total_loss),
        composite("se_block", check_se),
        composite("convnext_block", check_block),
        composite("block_se_stack", check_stack),
        composite("patchify_stem", check_stem),
        composite("downsample_layer", check_downsample),
        composite("stn", check_stn),
    ]);
    out.push(Check {
        name: "micro_model",
        tolerance: MODEL_TOLERANCE,
        seeds: MODEL_SEEDS,
        run: check_model,
    });
    out
}

/// Runs every check, or only the one named by `only`, on seeds `0..seeds`.
pub fn run_checks(only: Option<&str>) -> Result<Vec<CheckOutcome>> {
    let all = checks();
    let selected: Vec<Check> = match only {
        None => all,
        Some(name) => {
            let hit: Vec<Check> = all.iter().copied().filter(|c| c.name == name).collect();
            if hit.is_empty() {
                let names: Vec<&str> = all.iter().map(|c| c.name).collect();
                return Err(Error::Config(format!("unknown op `{name}` (valid: {})", names.join(", "))));
            }
            hit
        }
    };
    selected.iter().map(run_one).collect()
}

pub fn run_one(check: &Check) -> Result<CheckOutcome> {
    let mut out = CheckOutcome {
        name: check.name,
        tolerance: check.tolerance,
        seeds: check.seeds,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_seed: 0,
    };
    for seed in 0..check.seeds as u64 {
        let r = check.run(seed)?;
        out.checked += r.checked;
        out.skipped += r.skipped;
        // NaN must not hide behind a comparison
        if r.max_rel_error.is_nan() || r.max_rel_error > out.max_rel_error {
            out.max_rel_error = if r.max_rel_error.is_nan() { f64::INFINITY } else { r.max_rel_error };
            out.worst_seed = seed;
        }
    }
    Ok(out)
}

/// Fixed-width table, one row per check.
pub fn format_table(rows: &[CheckOutcome]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(2).max(2);
    let mut s = format!(
        "{:<width$}  {:>12}  {:>9}  {:>7}  {:>7}  result\n",
        "op", "max rel err", "threshold", "checked", "skipped"
    );
    for r in rows {
        s += &format!(
            "{:<width$}  {:>12.3e}  {:>9.0e}  {:>7}  {:>7}  {}\n",
            r.name,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            r.skipped,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    s
}

fn rng(seed: u64) -> StreamRng {
    StreamRng::derive(seed, &[0x6772_6164])
}

fn uniform(rng: &mut StreamRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::from_vec(v, shape).expect("valid shape")
}

/// Sum of a few low-frequency cosines per plane. Bilinear sampling of
/// per-pixel noise has a large slope jump at every cell edge, which a
/// finite difference through the STN keeps tripping over.
pub fn smooth_images(rng: &mut StreamRng, n: usize, c: usize, side: usize) -> Tensor<f64> {
    let mut v = Vec::with_capacity(n * c * side * side);
    for _ in 0..n * c {
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    rng.random_range(-1.5..1.5),
                    rng.random_range(-1.5..1.5),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.2..0.5),
                ]
            })
            .collect();
        for y in 0..side {
            for x in 0..side {
                let (u, w) = (x as f64 / side as f64, y as f64 / side as f64);
                let tau = std::f64::consts::TAU;
                v.push(waves.iter().map(|[fx, fy, ph, a]| a * (tau * (fx * u + fy * w) + ph).cos()).sum());
            }
        }
    }
    Tensor::from_vec(v, &[n, c, side, side]).expect("valid shape")
}

/// `sum(y ⊙ r)` for a fixed random `r`, so no gradient cancels by symmetry.
fn contract(y: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let r = uniform(&mut StreamRng::derive(seed, &[0x5eed]), y.shape(), 0.5, 1.5);
    Ok(y.mul(&r)?.sum())
}

fn check<F>(inputs: Vec<Tensor<f64>>, f: F) -> emonext_tensor::Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    GradCheck::default().run(|v| f(v).map_err(Error::into_tensor_error), &inputs)
}

/// Random values for a block's parameters, in spec order.
fn spec_values(rng: &mut StreamRng, specs: &[ParamSpec], bound: f64) -> Vec<Tensor<f64>> {
    specs.iter().map(|s| uniform(rng, &s.shape, -bound, bound)).collect()
}

fn store(specs: &[ParamSpec], values: &[Tensor<f64>]) -> ParamStore<f64> {
    let mut p = ParamStore::new();
    for (s, v) in specs.iter().zip(values) {
        p.insert(s.name.clone(), v.clone());
    }
    p
}

fn check_attention(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let inputs = vec![
        uniform(&mut r, &[2, 4, 6], -1.0, 1.0),
        uniform(&mut r, &[6, 6], -0.8, 0.8),
        uniform(&mut r, &[6, 6], -0.8, 0.8),
    ];
    check(inputs, |v| contract(&attention_weights(&v[0], &v[1], &v[2])?, seed))
}

fn check_sa(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let inputs = vec![uniform(&mut r, &[2, 4, 4], -2.0, 2.0)];
    check(inputs, |v| sa_regularizer(&v[0].softmax(-1)?))
}

fn check_ce(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let inputs = vec![uniform(&mut r, &[4, 7], -2.0, 2.0)];
    check(inputs, |v| cross_entropy_smoothed(&v[0], &[0, 3, 6, 1], 0.1))
}

fn check_total_loss(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let inputs = vec![uniform(&mut r, &[3, 7], -2.0, 2.0), uniform(&mut r, &[3, 5, 5], -2.0, 2.0)];
    check(inputs, |v| Ok(total_loss(&v[0], &[2, 5, 4], &v[1].softmax(-1)?, 0.5, 0.1)?.total))
}

fn check_se(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let specs = SEParams::<f64>::specs("se", 8, 2);
    let mut inputs = vec![uniform(&mut r, &[2, 8, 3, 3], -1.0, 1.0)];
    inputs.extend(spec_values(&mut r, &specs, 0.8));
    check(inputs, move |v| {
        let p = SEParams::from_store(&store(&specs, &v[1..]), "se")?;
        contract(&se_block(&v[0], &p)?, seed)
    })
}

fn check_block(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let specs = BlockParams::<f64>::specs("b", 4);
    let mut inputs = vec![uniform(&mut r, &[2, 4, 5, 5], -1.0, 1.0)];
    inputs.extend(spec_values(&mut r, &specs, 0.5));
    check(inputs, move |v| {
        let p = BlockParams::from_store(&store(&specs, &v[1..]), "b")?;
        contract(&convnext_block(&v[0], &p, 0.0, None)?, seed)
    })
}

fn check_stack(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let mut specs = BlockParams::<f64>::specs("b", 4);
    specs.extend(SEParams::<f64>::specs("se", 4, 2));
    let mut inputs = vec![uniform(&mut r, &[1, 4, 8, 8], -1.0, 1.0)];
    inputs.extend(spec_values(&mut r, &specs, 0.5));
    let gc = GradCheck::default().sampled(24, seed);
    gc.run(
        |v| {
            let s = store(&specs, &v[1..]);
            let run = || -> Result<Tensor<f64>> {
                let h = convnext_block(&v[0], &BlockParams::from_store(&s, "b")?, 0.0, None)?;
                contract(&se_block(&h, &SEParams::from_store(&s, "se")?)?, seed)
            };
            run().map_err(Error::into_tensor_error)
        },
        &inputs,
    )
}

fn check_stem(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let specs = StemParams::<f64>::specs("stem", 2, 8, 4);
    let mut inputs = vec![uniform(&mut r, &[1, 2, 8, 8], -1.0, 1.0)];
    inputs.extend(spec_values(&mut r, &specs, 0.5));
    check(inputs, move |v| {
        let p = StemParams::from_store(&store(&specs, &v[1..]), "stem")?;
        contract(&patchify_stem(&v[0], &p)?, seed)
    })
}

fn check_downsample(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let specs = DownsampleParams::<f64>::specs("ds", 3, 5);
    let mut inputs = vec![uniform(&mut r, &[2, 3, 4, 4], -1.0, 1.0)];
    inputs.extend(spec_values(&mut r, &specs, 0.5));
    check(inputs, move |v| {
        let p = DownsampleParams::from_store(&store(&specs, &v[1..]), "ds")?;
        contract(&downsample_layer(&v[0], &p)?, seed)
    })
}

/// STN at 16×16, the smallest input its two conv/pool stages accept.
fn check_stn(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let mut r = rng(seed);
    let specs = STNParams::<f64>::specs("stn", 1, 16).map_err(Error::into_tensor_error)?;
    let mut inputs = vec![smooth_images(&mut r, 2, 1, 16)];
    for s in &specs {
        let t = match s.name.as_str() {
            // near-identity transform that keeps taps off pixel centers
            "stn.fc2.bias" => {
                let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
                let v = id.iter().map(|b| b + r.random_range(-0.2..0.2)).collect();
                Tensor::from_vec(v, &s.shape)?
            }
            "stn.fc2.weight" => uniform(&mut r, &s.shape, -0.1, 0.1),
            _ => uniform(&mut r, &s.shape, -0.4, 0.4),
        };
        inputs.push(t);
    }
    let gc = GradCheck::new(PIECEWISE_EPS).skip_nonsmooth(SMOOTH_TOL).sampled(40, seed);
    gc.run(
        |v| {
            let p = STNParams::from_store(&store(&specs, &v[1..]), "stn").map_err(Error::into_tensor_error)?;
            stn_forward(&v[0], &p).and_then(|y| contract(&y, seed)).map_err(Error::into_tensor_error)
        },
        &inputs,
    )
}

/// Micro parameters moved away from their initialization so that every
/// path carries gradient: layer scales near one, a non-identity STN,
/// and query/key projections strong enough for non-uniform attention.
pub fn perturbed_micro(seed: u64) -> Result<Model<f64>> {
    let cfg = Preset::Micro.config();
    let base = Model::<f64>::build(cfg.clone(), &StreamRng::new(seed))?;
    let mut r = rng(seed).split(1);
    let mut params = ParamStore::new();
    for (name, t) in base.params.iter() {
        let shape = t.shape().to_vec();
        let t = if name.ends_with("layer_scale") {
            uniform(&mut r, &shape, 0.5, 1.0)
        } else if name == "stn.fc2.weight" {
            uniform(&mut r, &shape, -0.02, 0.02)
        } else if name == "stn.fc2.bias" {
            let v = t.to_vec().iter().map(|b| b + r.random_range(-0.1..0.1)).collect();
            Tensor::from_vec(v, &shape)?
        } else if name.starts_with("head.q") || name.starts_with("head.k") {
            uniform(&mut r, &shape, -0.5, 0.5)
        } else if name.ends_with("bias") {
            uniform(&mut r, &shape, -0.1, 0.1)
        } else {
            t.detach()
        };
        params.insert(name.to_string(), t);
    }
    Model::from_params(cfg, params)
}

fn check_model(seed: u64) -> emonext_tensor::Result<GradCheckReport> {
    let model = perturbed_micro(seed).map_err(Error::into_tensor_error)?;
    let s = model.config.input_size;
    let x = smooth_images(&mut rng(seed).split(2), 2, 1, s);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let inputs: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| t.detach()).collect();
    let cfg = model.config.clone();
    let gc = GradCheck::new(PIECEWISE_EPS).skip_nonsmooth(SMOOTH_TOL).sampled(MODEL_SAMPLES, seed);
    gc.run(
        |v| {
            let mut p = ParamStore::new();
            for (n, t) in names.iter().zip(v) {
                p.insert(n.clone(), t.clone());
            }
            let m = Model { config: cfg.clone(), params: p };
            let out = m.forward(&x, None).map_err(Error::into_tensor_error)?;
            let loss = total_loss(&out.logits, &[1, 4], &out.weights, 0.1, 0.1).map_err(Error::into_tensor_error)?;
            Ok(loss.total)
        },
        &inputs,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let all = checks();
        let mut names: Vec<&str> = all.iter().map(|c| c.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), all.len());
    }

    #[test]
    fn unknown_op_is_config_error() {
        let err = run_checks(Some("nope")).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("gelu")), "{err}");
    }

    #[test]
    fn filter_runs_one() {
        let rows = run_checks(Some("gelu")).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].passed());
        assert!(format_table(&rows).contains("gelu"));
    }

    #[test]
    fn composites_pass() {
        for name in ["attention_weights", "sa_regularizer", "cross_entropy_smoothed", "total_loss", "se_block", "convnext_block"] {
            let c = checks().into_iter().find(|c| c.name == name).unwrap();
            let o = run_one(&c).unwrap();
            assert!(o.passed(), "{o:?}");
        }
    }
}
