//! Feed-forward networks: spec, parameters, forward pass, and a flat binary
//! parameter format.
//!
//! Parameters are an ordered list of named tensors (`w0, b0, w1, b1, ...`).
//! The serialized form is the `BAT1` format: magic bytes `BAT1`, a little-endian
//! u32 tensor count, then per tensor a u32 name length, the UTF-8 name, a u32
//! rank, u32 dims, and the row-major little-endian f64 payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

const PARAMS_MAGIC: &[u8; 4] = b"BAT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::InvalidConfig(format!("unknown activation '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
        }
    }
}

/// Architecture of a fully-connected classifier. An empty `hidden` list gives
/// the linear model used in closed-form tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, classes: usize, activation: Activation) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden,
            classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be >= 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("class count must be >= 2".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        Ok(())
    }

    /// (in, out) shape of each weight matrix, in order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.classes));
        dims
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// Ordered, named weight and bias tensors for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    tensors: Vec<(String, Tensor)>,
}

impl Params {
    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Self {
        Self { tensors }
    }

    /// Uniform init in [-sqrt(1/fan_in), +sqrt(1/fan_in)], one seeded stream
    /// per layer.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut tensors = Vec::new();
        for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            let bound = (1.0 / fan_in as f64).sqrt();
            let mut rng = rng::stream(seed, &[purpose::PARAM_INIT, layer as u64]);
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            let b: Vec<f64> = (0..fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            tensors.push((format!("w{layer}"), Tensor::from_vec(vec![fan_in, fan_out], w)?));
            tensors.push((format!("b{layer}"), Tensor::from_vec(vec![fan_out], b)?));
        }
        Ok(Self { tensors })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        let mut tensors = Vec::new();
        for (layer, (fan_in, fan_out)) in spec.layer_dims().into_iter().enumerate() {
            tensors.push((format!("w{layer}"), Tensor::zeros(vec![fan_in, fan_out])));
            tensors.push((format!("b{layer}"), Tensor::zeros(vec![fan_out])));
        }
        Self { tensors }
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.tensors
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// Check the layer shape chain against a spec (out-dim of layer k equals
    /// in-dim of layer k+1 by construction; this validates count and shapes).
    pub fn matches(&self, spec: &NetworkSpec) -> Result<()> {
        let dims = spec.layer_dims();
        if self.tensors.len() != dims.len() * 2 {
            return Err(Error::InvalidConfig(format!(
                "parameter count {} does not match spec ({} layers)",
                self.tensors.len(),
                dims.len()
            )));
        }
        for (layer, (fan_in, fan_out)) in dims.into_iter().enumerate() {
            let w = &self.tensors[layer * 2].1;
            let b = &self.tensors[layer * 2 + 1].1;
            if w.shape() != [fan_in, fan_out] {
                return Err(Error::ShapeMismatch {
                    context: "Params::matches weight",
                    expected: vec![fan_in, fan_out],
                    got: w.shape().to_vec(),
                });
            }
            if b.shape() != [fan_out] {
                return Err(Error::ShapeMismatch {
                    context: "Params::matches bias",
                    expected: vec![fan_out],
                    got: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Multiply the output layer (weights and bias) by `factor`. With
    /// `factor = 1/T` this is temperature scaling: softmax outputs flatten for
    /// T > 1 while every argmax is preserved.
    pub fn scale_output_layer(&mut self, factor: f64) {
        let n = self.tensors.len();
        for idx in [n - 2, n - 1] {
            for v in self.tensors[idx].1.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Register every tensor on a tape. `trainable` decides leaf vs constant.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(_, t)| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        ParamVars { vars }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(PARAMS_MAGIC)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != PARAMS_MAGIC {
            return Err(Error::BadParamsFile(format!(
                "bad magic {:?}, expected {:?}",
                magic, PARAMS_MAGIC
            )));
        }
        let count = read_u32_le(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32_le(&mut r)? as usize;
            if name_len > 1024 {
                return Err(Error::BadParamsFile(format!("unreasonable name length {name_len}")));
            }
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::BadParamsFile("tensor name is not UTF-8".into()))?;
            let rank = read_u32_le(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32_le(&mut r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        Ok(Self { tensors })
    }
}

fn read_u32_le<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

/// Tape handles for registered parameters.
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// One gradient per parameter tensor, zeros where the loss never touched it.
    pub fn grads(&self, tape: &Tape, store: &crate::tape::GradStore) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| store.get_or_zeros(v, tape.value(v).shape()))
            .collect()
    }
}

/// Forward pass on a tape: `batch` [m, input_dim] -> logits [m, classes].
pub fn forward_on(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ParamVars,
    batch: Var,
) -> Result<Var> {
    let got = tape.value(batch).shape().to_vec();
    if got.len() != 2 || got[1] != spec.input_dim {
        return Err(Error::ShapeMismatch {
            context: "forward batch",
            expected: vec![got.first().copied().unwrap_or(0), spec.input_dim],
            got,
        });
    }
    if params.vars.len() != spec.num_layers() * 2 {
        return Err(Error::InvalidConfig(format!(
            "forward: {} param tensors for a {}-layer spec",
            params.vars.len(),
            spec.num_layers()
        )));
    }
    let mut h = batch;
    let layers = spec.num_layers();
    for layer in 0..layers {
        let w = params.vars[layer * 2];
        let b = params.vars[layer * 2 + 1];
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        if layer + 1 < layers {
            h = match spec.activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
            };
        }
    }
    Ok(h)
}

/// Logits without gradient recording.
pub fn forward(spec: &NetworkSpec, params: &Params, batch: &Tensor) -> Result<Tensor> {
    params.matches(spec)?;
    let mut tape = Tape::new();
    let pv = params.register(&mut tape, false);
    let bv = tape.constant(batch.clone());
    let logits = forward_on(&mut tape, spec, &pv, bv)?;
    Ok(tape.value(logits).clone())
}

/// Predicted class per row (argmax, ties toward the lowest index).
pub fn predict(spec: &NetworkSpec, params: &Params, batch: &Tensor) -> Result<Vec<usize>> {
    let logits = forward(spec, params, batch)?;
    Ok((0..logits.rows()).map(|i| logits.argmax_row(i)).collect())
}

/// Fraction of rows whose prediction equals the label.
pub fn accuracy(spec: &NetworkSpec, params: &Params, batch: &Tensor, labels: &[usize]) -> Result<f64> {
    let preds = predict(spec, params, batch)?;
    if preds.len() != labels.len() {
        return Err(Error::DimMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Max relative error between `grads` (one tensor per parameter tensor) and a
/// central finite difference of `loss_of` over every parameter entry. The per
/// coordinate error is `|ad - fd| / max(|ad|, |fd|, 1)`.
pub fn params_finite_diff_max_err<F>(
    params: &Params,
    grads: &[Tensor],
    loss_of: F,
    h: f64,
) -> Result<f64>
where
    F: Fn(&Params) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::InvalidConfig("finite differences require h > 0".into()));
    }
    if grads.len() != params.num_tensors() {
        return Err(Error::DimMismatch {
            left: grads.len(),
            right: params.num_tensors(),
        });
    }
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for ti in 0..params.num_tensors() {
        for i in 0..params.tensors()[ti].1.len() {
            let orig = probe.tensors()[ti].1.data()[i];
            probe.tensors_mut()[ti].1.data_mut()[i] = orig + h;
            let f_plus = loss_of(&probe)?;
            probe.tensors_mut()[ti].1.data_mut()[i] = orig - h;
            let f_minus = loss_of(&probe)?;
            probe.tensors_mut()[ti].1.data_mut()[i] = orig;
            let fd = (f_plus - f_minus) / (2.0 * h);
            let ad = grads[ti].data()[i];
            let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> NetworkSpec {
        NetworkSpec::new(3, vec![4], 2, Activation::Tanh).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = NetworkSpec::new(2, vec![3], 2, Activation::Relu).unwrap();
        let params = Params::zeros(&spec);
        let x = Tensor::from_rows(&[vec![0.4, -1.0], vec![2.0, 0.0]]).unwrap();
        let logits = forward(&spec, &params, &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_model_matches_w_times_x() {
        // 1-D linear model w=2, b=0, x=0.5: first logit is w*x = 1.0
        let spec = NetworkSpec::new(1, vec![], 2, Activation::Relu).unwrap();
        let params = Params::from_tensors(vec![
            ("w0".into(), Tensor::from_vec(vec![1, 2], vec![2.0, 0.0]).unwrap()),
            ("b0".into(), Tensor::zeros(vec![2])),
        ]);
        let x = Tensor::from_vec(vec![1, 1], vec![0.5]).unwrap();
        let logits = forward(&spec, &params, &x).unwrap();
        assert_eq!(logits.data(), &[1.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let spec = small_spec();
        let x = Tensor::from_rows(&[vec![0.1, 0.2, -0.3]]).unwrap();
        let a = forward(&spec, &Params::init(&spec, 42).unwrap(), &x).unwrap();
        let b = forward(&spec, &Params::init(&spec, 42).unwrap(), &x).unwrap();
        assert_eq!(a.data(), b.data());
        let c = forward(&spec, &Params::init(&spec, 43).unwrap(), &x).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn forward_rejects_bad_batch_shape() {
        let spec = small_spec();
        let params = Params::init(&spec, 0).unwrap();
        let x = Tensor::from_rows(&[vec![0.1, 0.2]]).unwrap();
        assert!(matches!(
            forward(&spec, &params, &x),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn grad_params_loss_sum_of_params_is_ones() {
        let spec = small_spec();
        let params = Params::init(&spec, 7).unwrap();
        let mut tape = Tape::new();
        let pv = params.register(&mut tape, true);
        // loss = sum over all parameter entries
        let sums: Vec<Var> = pv.vars().iter().map(|&v| tape.sum_all(v)).collect();
        let mut total = sums[0];
        for &s in &sums[1..] {
            total = tape.add(total, s).unwrap();
        }
        let store = tape.backward(total).unwrap();
        for (g, (_, p)) in pv.grads(&tape, &store).iter().zip(params.tensors()) {
            assert_eq!(g.shape(), p.shape());
            assert!(g.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn grad_params_matches_finite_differences() {
        // CE loss on a random small net vs central differences over theta
        let spec = small_spec();
        let params = Params::init(&spec, 11).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -0.8, 1.2], vec![-0.5, 0.4, 0.0]]).unwrap();
        let labels = [0usize, 1];

        let ce_loss = |tape: &mut Tape, spec: &NetworkSpec, pv: &ParamVars, xv: Var| -> Var {
            let logits = forward_on(tape, spec, pv, xv).unwrap();
            let probs = tape.softmax_rows(logits).unwrap();
            let py = tape.select_cols(probs, &labels).unwrap();
            let lp = tape.ln_clamped(py);
            let neg = tape.scale(lp, -1.0);
            tape.mean_all(neg)
        };

        let mut tape = Tape::new();
        let pv = params.register(&mut tape, true);
        let xv = tape.constant(x.clone());
        let loss = ce_loss(&mut tape, &spec, &pv, xv);
        let store = tape.backward(loss).unwrap();
        let grads = pv.grads(&tape, &store);

        let err = params_finite_diff_max_err(
            &params,
            &grads,
            |p| {
                let mut tape = Tape::new();
                let pv = p.register(&mut tape, false);
                let xv = tape.constant(x.clone());
                let loss = ce_loss(&mut tape, &spec, &pv, xv);
                tape.value(loss).item()
            },
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_input_sign_follows_weight_sign() {
        // Linear logit [w*x, 0] with CE toward class 1 (the wrong class when
        // w*x > 0): pushing the logit of class 0 up raises the loss, so the
        // input gradient has the sign of w.
        for w in [2.5, -1.75] {
            let spec = NetworkSpec::new(1, vec![], 2, Activation::Relu).unwrap();
            let params = Params::from_tensors(vec![
                ("w0".into(), Tensor::from_vec(vec![1, 2], vec![w, 0.0]).unwrap()),
                ("b0".into(), Tensor::zeros(vec![2])),
            ]);
            let mut tape = Tape::new();
            let pv = params.register(&mut tape, false);
            let xv = tape.leaf(Tensor::from_vec(vec![1, 1], vec![0.4]).unwrap());
            let logits = forward_on(&mut tape, &spec, &pv, xv).unwrap();
            let probs = tape.softmax_rows(logits).unwrap();
            let py = tape.select_cols(probs, &[1]).unwrap();
            let lp = tape.ln_clamped(py);
            let neg = tape.scale(lp, -1.0);
            let loss = tape.mean_all(neg);
            let store = tape.backward(loss).unwrap();
            let g = store.get(xv).unwrap().data()[0];
            assert_eq!(g.signum(), w.signum(), "w = {w}, grad = {g}");
        }
    }

    #[test]
    fn grad_input_zero_when_loss_ignores_input() {
        let mut tape = Tape::new();
        let xv = tape.leaf(Tensor::from_vec(vec![2], vec![0.3, -0.4]).unwrap());
        let c = tape.constant(Tensor::scalar(3.0));
        let loss = tape.sum_all(c);
        let zeroed = tape.scale(xv, 0.0);
        let z = tape.sum_all(zeroed);
        let loss = tape.add(loss, z).unwrap();
        let store = tape.backward(loss).unwrap();
        assert_eq!(store.get(xv).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn params_roundtrip_bat1() {
        let spec = small_spec();
        let params = Params::init(&spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bat");
        params.save(&path).unwrap();
        let loaded = Params::load(&path).unwrap();
        assert_eq!(params, loaded);
        loaded.matches(&spec).unwrap();
    }

    #[test]
    fn load_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bat");
        std::fs::write(&path, b"NOPE\x00\x00\x00\x00").unwrap();
        assert!(matches!(Params::load(&path), Err(Error::BadParamsFile(_))));
    }

    #[test]
    fn temperature_scaling_preserves_argmax() {
        let spec = small_spec();
        let params = Params::init(&spec, 3).unwrap();
        let mut scaled = params.clone();
        scaled.scale_output_layer(0.5);
        let x = Tensor::from_rows(&[vec![0.9, -0.4, 0.2], vec![-1.0, 0.3, 0.8]]).unwrap();
        assert_eq!(
            predict(&spec, &params, &x).unwrap(),
            predict(&spec, &scaled, &x).unwrap()
        );
    }
}
