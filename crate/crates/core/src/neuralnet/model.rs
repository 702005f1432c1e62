use ndarray::{Array1, Array2, Axis, Zip};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MlpConfig;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Forward-pass mode. Training draws dropout masks from the supplied RNG and
/// normalizes with batch statistics.
pub enum Mode<'a> {
    Train(&'a mut dyn RngCore),
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Linear {
    /// `out x in`; row `i` holds the incoming weights of output neuron `i`.
    pub(crate) weight: Array2<f64>,
    pub(crate) bias: Array1<f64>,
}

impl Linear {
    fn kaiming(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
        Linear {
            weight: Array2::from_shape_fn((fan_out, fan_in), |_| normal.sample(rng)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNorm {
    pub(crate) gamma: Array1<f64>,
    pub(crate) beta: Array1<f64>,
    pub(crate) running_mean: Array1<f64>,
    pub(crate) running_var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }
}

/// Linear -> batch norm -> ReLU -> dropout.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DenseUnit {
    pub(crate) linear: Linear,
    pub(crate) bn: BatchNorm,
}

#[derive(Debug, Clone)]
struct UnitCache {
    input: Array2<f64>,
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    /// Batch-norm output before the ReLU.
    pre: Array2<f64>,
    mask: Option<Array2<f64>>,
}

struct UnitGrads {
    dw: Array2<f64>,
    db: Array1<f64>,
    dgamma: Array1<f64>,
    dbeta: Array1<f64>,
}

impl DenseUnit {
    fn new(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        DenseUnit {
            linear: Linear::kaiming(fan_in, fan_out, rng),
            bn: BatchNorm::new(fan_out),
        }
    }

    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = self.linear.forward(x);
        let scale = Zip::from(&self.bn.gamma)
            .and(&self.bn.running_var)
            .map_collect(|g, v| g / (v + BN_EPS).sqrt());
        let shift = &self.bn.beta - &(&self.bn.running_mean * &scale);
        y *= &scale;
        y += &shift;
        y.mapv_inplace(|v| v.max(0.0));
        y
    }

    fn forward_train(&mut self, x: &Array2<f64>, dropout: f64, rng: &mut dyn RngCore) -> (Array2<f64>, UnitCache) {
        let z = self.linear.forward(x);
        let n = z.nrows() as f64;
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &z - &mean;
        let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = &centered * &inv_std;

        let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let bn = &mut self.bn;
        Zip::from(&mut bn.running_mean)
            .and(&mut bn.running_var)
            .and(&mean)
            .and(&var)
            .for_each(|rm, rv, &m, &v| {
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * m;
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * v * unbiased;
            });

        let mut pre = &xhat * &bn.gamma;
        pre += &bn.beta;
        let mut out = pre.mapv(|v| v.max(0.0));
        let mask = (dropout > 0.0).then(|| {
            let keep = 1.0 - dropout;
            let m = Array2::from_shape_fn(out.dim(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
            out *= &m;
            m
        });
        let cache = UnitCache {
            input: x.clone(),
            xhat,
            inv_std,
            pre,
            mask,
        };
        (out, cache)
    }

    fn backward(&self, cache: &UnitCache, dout: &Array2<f64>) -> (Array2<f64>, UnitGrads) {
        let mut d = dout.clone();
        if let Some(mask) = &cache.mask {
            d *= mask;
        }
        Zip::from(&mut d).and(&cache.pre).for_each(|g, &y| {
            if y <= 0.0 {
                *g = 0.0;
            }
        });
        let dgamma = (&d * &cache.xhat).sum_axis(Axis(0));
        let dbeta = d.sum_axis(Axis(0));
        let dxhat = &d * &self.bn.gamma;
        let n = d.nrows() as f64;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dz = dxhat * n;
        dz -= &sum_dxhat;
        dz -= &(&cache.xhat * &sum_dxhat_xhat);
        dz *= &(&cache.inv_std / n);

        let dw = dz.t().dot(&cache.input);
        let db = dz.sum_axis(Axis(0));
        let dx = dz.dot(&self.linear.weight);
        (dx, UnitGrads { dw, db, dgamma, dbeta })
    }
}

/// Activations saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    units: Vec<UnitCache>,
    head_input: Array2<f64>,
}

/// Parameter gradients, one flat row-major buffer per parameter in
/// [`MlpModel::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight { rows: usize, cols: usize },
    Bias,
    Gamma,
    Beta,
}

/// Mutable view of one trainable parameter.
pub struct ParamMut<'a> {
    pub name: String,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

/// Residual lifting network: stem unit, identity-skip blocks of two units,
/// optional tail units and a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub(crate) stem: DenseUnit,
    pub(crate) blocks: Vec<[DenseUnit; 2]>,
    pub(crate) tail: Vec<DenseUnit>,
    pub(crate) head: Linear,
}

impl MlpModel {
    /// Kaiming-normal weights (std `sqrt(2 / fan_in)`), zero biases, identity
    /// batch norm. Deterministic in `config.seed`.
    pub fn init_kaiming(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.hidden_dim;
        let stem = DenseUnit::new(config.input_dim, h, &mut rng);
        let blocks = (0..config.n_residual_blocks)
            .map(|_| [DenseUnit::new(h, h, &mut rng), DenseUnit::new(h, h, &mut rng)])
            .collect();
        let mut width = h;
        let tail = config
            .tail_dims
            .iter()
            .map(|&d| {
                let u = DenseUnit::new(width, d, &mut rng);
                width = d;
                u
            })
            .collect();
        let head = Linear::kaiming(width, config.output_dim, &mut rng);
        Ok(MlpModel {
            config: config.clone(),
            stem,
            blocks,
            tail,
            head,
        })
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.config.input_dim || x.nrows() == 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("B x {} with B >= 1", self.config.input_dim),
                found: format!("{} x {}", x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    /// Eval-mode forward: running batch-norm statistics, no dropout.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = self.stem.forward_eval(x);
        for [a, b] in &self.blocks {
            let o = b.forward_eval(&a.forward_eval(&h));
            h += &o;
        }
        for u in &self.tail {
            h = u.forward_eval(&h);
        }
        Ok(self.head.forward(&h))
    }

    /// Forward pass. Training mode updates the running batch-norm statistics
    /// and returns the cache needed by [`MlpModel::backward`].
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode<'_>) -> Result<(Array2<f64>, Option<Cache>)> {
        let rng = match mode {
            Mode::Eval => return Ok((self.predict(x)?, None)),
            Mode::Train(rng) => rng,
        };
        self.check_input(x)?;
        let p = self.config.dropout_rate;
        let mut units = Vec::with_capacity(1 + 2 * self.blocks.len() + self.tail.len());
        let (mut h, c) = self.stem.forward_train(x, p, rng);
        units.push(c);
        for [a, b] in &mut self.blocks {
            let (t, ca) = a.forward_train(&h, p, rng);
            let (o, cb) = b.forward_train(&t, p, rng);
            units.push(ca);
            units.push(cb);
            h += &o;
        }
        for u in &mut self.tail {
            let (t, c) = u.forward_train(&h, p, rng);
            units.push(c);
            h = t;
        }
        let out = self.head.forward(&h);
        Ok((out, Some(Cache { units, head_input: h })))
    }

    /// Exact gradients of `sum(dout * output)` with respect to every parameter,
    /// batch-norm batch statistics included.
    pub fn backward(&self, cache: &Cache, dout: &Array2<f64>) -> Gradients {
        let head_dw = dout.t().dot(&cache.head_input);
        let head_db = dout.sum_axis(Axis(0));
        let mut dh = dout.dot(&self.head.weight);

        let mut unit_grads: Vec<Option<UnitGrads>> = (0..cache.units.len()).map(|_| None).collect();
        let n_tail = self.tail.len();
        let tail_start = cache.units.len() - n_tail;
        for (i, u) in self.tail.iter().enumerate().rev() {
            let (dx, g) = u.backward(&cache.units[tail_start + i], &dh);
            unit_grads[tail_start + i] = Some(g);
            dh = dx;
        }
        for (bi, [a, b]) in self.blocks.iter().enumerate().rev() {
            let ia = 1 + 2 * bi;
            let (dt, gb) = b.backward(&cache.units[ia + 1], &dh);
            let (dx, ga) = a.backward(&cache.units[ia], &dt);
            unit_grads[ia + 1] = Some(gb);
            unit_grads[ia] = Some(ga);
            dh += &dx;
        }
        let (_, g0) = self.stem.backward(&cache.units[0], &dh);
        unit_grads[0] = Some(g0);

        let flat1 = |a: Array1<f64>| a.iter().copied().collect::<Vec<_>>();
        let flat2 = |a: Array2<f64>| a.iter().copied().collect::<Vec<_>>();
        let mut out = Vec::with_capacity(4 * unit_grads.len() + 2);
        for g in unit_grads.into_iter().map(|g| g.expect("every unit visited")) {
            out.push(flat2(g.dw));
            out.push(flat1(g.db));
            out.push(flat1(g.dgamma));
            out.push(flat1(g.dbeta));
        }
        out.push(flat2(head_dw));
        out.push(flat1(head_db));
        Gradients(out)
    }

    fn units(&self) -> Vec<(String, &DenseUnit)> {
        let mut v = vec![("stem".to_string(), &self.stem)];
        for (i, [a, b]) in self.blocks.iter().enumerate() {
            v.push((format!("blocks.{i}.a"), a));
            v.push((format!("blocks.{i}.b"), b));
        }
        for (i, u) in self.tail.iter().enumerate() {
            v.push((format!("tail.{i}"), u));
        }
        v
    }

    fn units_mut(&mut self) -> (Vec<(String, &mut DenseUnit)>, &mut Linear) {
        let MlpModel {
            stem,
            blocks,
            tail,
            head,
            ..
        } = self;
        let mut v = vec![("stem".to_string(), stem)];
        for (i, [a, b]) in blocks.iter_mut().enumerate() {
            v.push((format!("blocks.{i}.a"), a));
            v.push((format!("blocks.{i}.b"), b));
        }
        for (i, u) in tail.iter_mut().enumerate() {
            v.push((format!("tail.{i}"), u));
        }
        (v, head)
    }

    /// Trainable parameters in canonical order: per unit weight, bias, gamma,
    /// beta; then head weight and bias.
    pub fn parameters(&self) -> Vec<(String, ParamKind, &[f64])> {
        let mut v = Vec::new();
        for (name, u) in self.units() {
            let (r, c) = u.linear.weight.dim();
            v.push((format!("{name}.linear.weight"), ParamKind::Weight { rows: r, cols: c }, std_slice2(&u.linear.weight)));
            v.push((format!("{name}.linear.bias"), ParamKind::Bias, std_slice1(&u.linear.bias)));
            v.push((format!("{name}.bn.gamma"), ParamKind::Gamma, std_slice1(&u.bn.gamma)));
            v.push((format!("{name}.bn.beta"), ParamKind::Beta, std_slice1(&u.bn.beta)));
        }
        let (r, c) = self.head.weight.dim();
        v.push(("head.weight".into(), ParamKind::Weight { rows: r, cols: c }, std_slice2(&self.head.weight)));
        v.push(("head.bias".into(), ParamKind::Bias, std_slice1(&self.head.bias)));
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<ParamMut<'_>> {
        let (units, head) = self.units_mut();
        let mut v = Vec::new();
        for (name, u) in units {
            let (r, c) = u.linear.weight.dim();
            let DenseUnit { linear, bn } = u;
            v.push(ParamMut {
                name: format!("{name}.linear.weight"),
                kind: ParamKind::Weight { rows: r, cols: c },
                data: linear.weight.as_slice_mut().expect("standard layout"),
            });
            v.push(ParamMut {
                name: format!("{name}.linear.bias"),
                kind: ParamKind::Bias,
                data: linear.bias.as_slice_mut().expect("standard layout"),
            });
            v.push(ParamMut {
                name: format!("{name}.bn.gamma"),
                kind: ParamKind::Gamma,
                data: bn.gamma.as_slice_mut().expect("standard layout"),
            });
            v.push(ParamMut {
                name: format!("{name}.bn.beta"),
                kind: ParamKind::Beta,
                data: bn.beta.as_slice_mut().expect("standard layout"),
            });
        }
        let (r, c) = head.weight.dim();
        v.push(ParamMut {
            name: "head.weight".into(),
            kind: ParamKind::Weight { rows: r, cols: c },
            data: head.weight.as_slice_mut().expect("standard layout"),
        });
        v.push(ParamMut {
            name: "head.bias".into(),
            kind: ParamKind::Bias,
            data: head.bias.as_slice_mut().expect("standard layout"),
        });
        v
    }

    /// Running batch-norm statistics, `(name, mean, var)` per unit.
    pub fn running_stats(&self) -> Vec<(String, &[f64], &[f64])> {
        self.units()
            .into_iter()
            .map(|(n, u)| (n, std_slice1(&u.bn.running_mean), std_slice1(&u.bn.running_var)))
            .collect()
    }

    pub(crate) fn running_stats_mut(&mut self) -> Vec<(String, &mut [f64], &mut [f64])> {
        let (units, _) = self.units_mut();
        units
            .into_iter()
            .map(|(n, u)| {
                let BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } = &mut u.bn;
                (
                    n,
                    running_mean.as_slice_mut().expect("standard layout"),
                    running_var.as_slice_mut().expect("standard layout"),
                )
            })
            .collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, _, d)| d.len()).sum()
    }
}

fn std_slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn std_slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
