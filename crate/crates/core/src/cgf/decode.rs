use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::params::CgfParams;
use super::{CgfError, LOGVAR_CLAMP};
use crate::autodiff::{gemm_row, Activation, Graph, Tensor};
use crate::trajectory::{ConfigForm, Trajectory};

/// Step of the central difference used for the second time derivative.
pub const DERIVATIVE_STEP: f64 = 1e-4;

pub fn object_feature(params: &CgfParams, cloud: &Tensor) -> Result<Vec<f64>, CgfError> {
    if cloud.cols() != 3 {
        return Err(CgfError::Input(format!("cloud must be N x 3, got {} columns", cloud.cols())));
    }
    Ok(params.pointnet.encode(cloud)?)
}

/// Posterior mean and clamped log-variance for a cloud and a `T x 22`
/// joint trajectory whose row 0 is the grasp frame.
pub fn encode(params: &CgfParams, cloud: &Tensor, joints: &Tensor) -> Result<(Vec<f64>, Vec<f64>), CgfError> {
    if joints.rows() != params.frames {
        return Err(CgfError::Input(format!(
            "encoder expects {} frames, got {}",
            params.frames,
            joints.rows()
        )));
    }
    let f_o = object_feature(params, cloud)?;
    let h = params.hand_encoder.forward(joints)?;
    let mut input = f_o;
    input.extend_from_slice(h.data());
    let trunk = params.cvae_trunk.forward(&Tensor::row(&input))?.map(|v| v.max(0.0));
    let mu = params.mu_head.forward(&trunk)?.into_data();
    let lv = params
        .logvar_head
        .forward(&trunk)?
        .map(|v| v.clamp(LOGVAR_CLAMP.0, LOGVAR_CLAMP.1))
        .into_data();
    Ok((mu, lv))
}

/// `z = mu + exp(logvar / 2) * eps`. Finite log-variances are clamped to
/// the head bounds; `-inf` means zero variance, giving `z = mu` exactly.
pub fn reparameterize(mu: &[f64], logvar: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| {
            let eps: f64 = rng.sample(StandardNormal);
            let sigma = if *lv == f64::NEG_INFINITY {
                0.0
            } else {
                (0.5 * lv.clamp(LOGVAR_CLAMP.0, LOGVAR_CLAMP.1)).exp()
            };
            m + sigma * eps
        })
        .collect()
}

/// Decoder with the time-independent part of the first layer folded in,
/// so every query only pays for the time column and the later layers.
#[derive(Debug, Clone)]
pub struct ConditionedDecoder<'a> {
    params: &'a CgfParams,
    /// First-layer pre-activation at `t = 0`.
    offset: Vec<f64>,
    /// First-layer weights of the time input.
    time_weights: Vec<f64>,
}

/// Decoder output and its phase derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedState {
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub ddq: Vec<f64>,
}

impl<'a> ConditionedDecoder<'a> {
    pub fn new(params: &'a CgfParams, z: &[f64], f_o: &[f64]) -> Result<Self, CgfError> {
        let (nf, nz) = (params.object_feature_dim(), params.latent_dim());
        if f_o.len() != nf || z.len() != nz {
            return Err(CgfError::Input(format!(
                "decoder expects a {nf}-wide feature and {nz}-wide latent, got {} and {}",
                f_o.len(),
                z.len()
            )));
        }
        if z.iter().chain(f_o).any(|v| !v.is_finite()) {
            return Err(CgfError::Input("non-finite latent or feature".into()));
        }
        let w = params.decoder.weight(0);
        let hidden = w.cols();
        let mut cond = f_o.to_vec();
        cond.extend_from_slice(z);
        let mut offset = vec![0.0; hidden];
        gemm_row(&cond, &w.data()[..(nf + nz) * hidden], hidden, &mut offset);
        for (o, b) in offset.iter_mut().zip(params.decoder.bias(0).data()) {
            *o += b;
        }
        let time_weights = w.row_slice(nf + nz).to_vec();
        Ok(Self {
            params,
            offset,
            time_weights,
        })
    }

    fn relu_hidden(&self) -> bool {
        self.params.decoder.spec().activation == Activation::Relu
    }

    /// Configuration at phase `t` (25 numbers).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let dec = &self.params.decoder;
        let relu = self.relu_hidden();
        let last = dec.num_layers() - 1;
        let mut h: Vec<f64> = self
            .offset
            .iter()
            .zip(&self.time_weights)
            .map(|(o, w)| o + t * w)
            .collect();
        for layer in 1..=last {
            if relu {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let w = dec.weight(layer);
            let mut out = vec![0.0; w.cols()];
            gemm_row(&h, w.data(), w.cols(), &mut out);
            for (o, b) in out.iter_mut().zip(dec.bias(layer).data()) {
                *o += b;
            }
            h = out;
        }
        h
    }

    /// Configuration and `dq/dt` at `t`. The derivative comes from one
    /// reverse pass: the time input is replicated once per output and the
    /// pass is seeded with the identity.
    pub fn first_derivative(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>), CgfError> {
        let dec = &self.params.decoder;
        let n_out = dec.spec().output_width();
        let relu = self.relu_hidden();
        let last = dec.num_layers() - 1;
        let mut g = Graph::new();
        let tv = g.leaf(Tensor::filled(n_out, 1, t));
        let wt = g.constant(Tensor::row(&self.time_weights));
        let off = g.constant(Tensor::row(&self.offset));
        let mut h = g.matmul(tv, wt)?;
        h = g.add_bias(h, off)?;
        for layer in 1..=last {
            if relu {
                h = g.relu(h);
            }
            let w = g.constant(dec.weight(layer).clone());
            let b = g.constant(dec.bias(layer).clone());
            h = g.matmul(h, w)?;
            h = g.add_bias(h, b)?;
        }
        let grads = g.backward_with_seed(h, Tensor::identity(n_out))?;
        let q = g.value(h).row_slice(0).to_vec();
        let dq = grads.get(tv).map(|d| d.data().to_vec()).unwrap_or_else(|| vec![0.0; n_out]);
        Ok((q, dq))
    }

    /// Configuration, first derivative by reverse mode and second
    /// derivative by central differences of the first.
    pub fn derivatives(&self, t: f64) -> Result<DecodedState, CgfError> {
        let (q, dq) = self.first_derivative(t)?;
        let ddq = central_second_derivative(|s| Ok(self.first_derivative(s)?.1), t, DERIVATIVE_STEP)?;
        Ok(DecodedState { q, dq, ddq })
    }

    /// Lipschitz constant of `t -> decode(t)` from Frobenius norms of the
    /// time column and the later layers.
    pub fn time_lipschitz_bound(&self) -> f64 {
        let dec = &self.params.decoder;
        let t_norm = self.time_weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        (1..dec.num_layers()).map(|l| dec.weight(l).norm()).product::<f64>() * t_norm
    }
}

/// `(f'(t + h) - f'(t - h)) / 2h` componentwise.
pub fn central_second_derivative(
    mut first: impl FnMut(f64) -> Result<Vec<f64>, CgfError>,
    t: f64,
    h: f64,
) -> Result<Vec<f64>, CgfError> {
    let plus = first(t + h)?;
    let minus = first(t - h)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

pub fn decode(params: &CgfParams, t: f64, z: &[f64], f_o: &[f64]) -> Result<Vec<f64>, CgfError> {
    if !t.is_finite() {
        return Err(CgfError::Input("non-finite time".into()));
    }
    Ok(ConditionedDecoder::new(params, z, f_o)?.eval(t))
}

pub fn decode_derivatives(params: &CgfParams, t: f64, z: &[f64], f_o: &[f64]) -> Result<DecodedState, CgfError> {
    if !t.is_finite() {
        return Err(CgfError::Input("non-finite time".into()));
    }
    ConditionedDecoder::new(params, z, f_o)?.derivatives(t)
}

/// Seed of code `index` under a batch seed.
fn code_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

/// Draws `n_codes` latent codes from the prior and decodes each on
/// `time_grid`. The grid may be given in either direction; frames are
/// always returned from the start of the motion (`t = 1`) to the grasp
/// (`t = 0`).
pub fn sample_trajectories(
    params: &CgfParams,
    cloud: &Tensor,
    n_codes: usize,
    time_grid: &[f64],
    seed: u64,
) -> Result<Vec<Trajectory>, CgfError> {
    if n_codes == 0 {
        return Err(CgfError::Input("need at least one latent code".into()));
    }
    if time_grid.is_empty() || time_grid.iter().any(|t| !t.is_finite()) {
        return Err(CgfError::Input("time grid must be non-empty and finite".into()));
    }
    let decreasing = time_grid.windows(2).all(|w| w[1] < w[0]);
    let increasing = time_grid.windows(2).all(|w| w[1] > w[0]);
    let times: Vec<f64> = if decreasing {
        time_grid.to_vec()
    } else if increasing {
        time_grid.iter().rev().copied().collect()
    } else {
        return Err(CgfError::Input("time grid must be strictly monotone".into()));
    };
    let f_o = object_feature(params, cloud)?;
    let hash = params.hash();
    let mut out = Vec::with_capacity(n_codes);
    for i in 0..n_codes {
        let s = code_seed(seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let z: Vec<f64> = (0..params.latent_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let dec = ConditionedDecoder::new(params, &z, &f_o)?;
        let frames = times.iter().map(|t| dec.eval(*t)).collect();
        let mut traj = Trajectory::new(format!("cgf-{seed}-{i}"), "cgf", ConfigForm::Continuous, times.clone(), frames);
        traj.z = Some(z);
        traj.seed = Some(s);
        traj.model_hash = Some(hash.clone());
        out.push(traj);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{compare_gradients, GradCheckOptions};
    use crate::kinematics::{JointConfig, KinematicsError};

    fn random_inputs(params: &CgfParams, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = (0..params.latent_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let f = (0..params.object_feature_dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
        (z, f)
    }

    fn cloud(seed: u64, n: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(n, 3, (0..3 * n).map(|_| rng.gen_range(-0.05..0.05)).collect()).unwrap()
    }

    #[test]
    fn zero_network_decodes_to_degenerate_rotation() {
        let p = CgfParams::zeros();
        let (z, f) = random_inputs(&p, 1);
        let q = decode(&p, 0.3, &z, &f).unwrap();
        assert!(q.iter().all(|v| *v == 0.0));
        assert_eq!(
            JointConfig::from_flat(&q).unwrap().to_actuator().unwrap_err(),
            KinematicsError::DegenerateRotation
        );
        let (mu, lv) = encode(&p, &cloud(2, 10), &Tensor::zeros(20, 22)).unwrap();
        assert!(mu.iter().chain(&lv).all(|v| *v == 0.0));
    }

    #[test]
    fn conditioned_path_matches_full_forward() {
        let p = CgfParams::new(4);
        let (z, f) = random_inputs(&p, 5);
        let mut input = f.clone();
        input.extend_from_slice(&z);
        input.push(0.37);
        let full = p.decoder.forward(&Tensor::row(&input)).unwrap();
        let fast = decode(&p, 0.37, &z, &f).unwrap();
        for (a, b) in full.data().iter().zip(&fast) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(fast, decode(&p, 0.37, &z, &f).unwrap());
    }

    #[test]
    fn encoder_is_permutation_invariant_and_deterministic() {
        let p = CgfParams::new(6);
        let c = cloud(7, 40);
        let rows: Vec<Vec<f64>> = (0..40).rev().map(|r| c.row_slice(r).to_vec()).collect();
        let permuted = Tensor::from_rows(&rows).unwrap();
        let joints = Tensor::filled(20, 22, 0.1);
        let a = encode(&p, &c, &joints).unwrap();
        assert_eq!(a, encode(&p, &permuted, &joints).unwrap());
        assert_eq!(a, encode(&p, &c, &joints).unwrap());
        assert!(encode(&p, &c, &Tensor::zeros(19, 22)).is_err());
    }

    #[test]
    fn first_derivative_matches_finite_differences() {
        let p = CgfParams::new(8);
        let (z, f) = random_inputs(&p, 9);
        let dec = ConditionedDecoder::new(&p, &z, &f).unwrap();
        for t in [0.05, 0.5, 0.93] {
            let (_, dq) = dec.first_derivative(t).unwrap();
            for k in 0..25 {
                let report = compare_gradients(
                    |x| dec.eval(x.data()[0])[k],
                    &Tensor::scalar(t),
                    &Tensor::scalar(dq[k]),
                    None,
                    &GradCheckOptions::default(),
                );
                assert!(report.passed(), "t={t} k={k} {report:?}");
            }
        }
    }

    #[test]
    fn linear_decoder_has_constant_velocity() {
        let p = CgfParams::new(10).with_decoder_activation(Activation::None);
        let (z, f) = random_inputs(&p, 11);
        let a = decode_derivatives(&p, 0.2, &z, &f).unwrap();
        let b = decode_derivatives(&p, 0.8, &z, &f).unwrap();
        for i in 0..25 {
            assert!((a.dq[i] - b.dq[i]).abs() < 1e-12);
            assert!(a.ddq[i].abs() < 1e-6);
        }
    }

    #[test]
    fn second_derivative_of_quadratic_is_constant() {
        // f(t) = 3t^2 - t, f'(t) = 6t - 1, f'' = 6
        for t in [0.0, 0.4, 1.0] {
            let d = central_second_derivative(|s| Ok(vec![6.0 * s - 1.0]), t, DERIVATIVE_STEP).unwrap();
            assert!((d[0] - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn decoder_respects_time_lipschitz_bound() {
        let p = CgfParams::new(12);
        let (z, f) = random_inputs(&p, 13);
        let dec = ConditionedDecoder::new(&p, &z, &f).unwrap();
        let l = dec.time_lipschitz_bound();
        for k in 0..50 {
            let t = k as f64 / 50.0;
            let delta = 1e-3;
            let (a, b) = (dec.eval(t), dec.eval(t + delta));
            let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(dist <= l * delta);
        }
    }

    #[test]
    fn reparameterization() {
        let mu = vec![0.5, -1.0];
        let z = reparameterize(&mu, &[f64::NEG_INFINITY; 2], &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(z, mu);
        let a = reparameterize(&mu, &[0.0; 2], &mut ChaCha8Rng::seed_from_u64(1));
        let b = reparameterize(&mu, &[0.0; 2], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);

        let n = 100_000;
        let mu: Vec<f64> = (0..16).map(|i| 0.1 * i as f64 - 0.8).collect();
        let lv: Vec<f64> = (0..16).map(|i| -1.0 + 0.1 * i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut sum = vec![0.0; 16];
        for _ in 0..n {
            for (s, v) in sum.iter_mut().zip(reparameterize(&mu, &lv, &mut rng)) {
                *s += v;
            }
        }
        for i in 0..16 {
            let sigma = (0.5 * lv[i]).exp();
            assert!((sum[i] / n as f64 - mu[i]).abs() <= 3.0 * sigma / (n as f64).sqrt());
        }
    }

    #[test]
    fn sampling_is_resolution_invariant_and_ordered() {
        let p = CgfParams::new(14);
        let c = cloud(15, 30);
        let coarse = crate::trajectory::phase_grid(20);
        // refine every interval of the coarse grid
        let mut fine = Vec::new();
        for w in coarse.windows(2) {
            for k in 0..10 {
                fine.push(w[0] + (w[1] - w[0]) * k as f64 / 10.0);
            }
        }
        fine.push(0.0);
        let a = sample_trajectories(&p, &c, 2, &coarse, 3).unwrap();
        let b = sample_trajectories(&p, &c, 2, &fine, 3).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            for (k, t) in coarse.iter().enumerate() {
                let j = tb.times.iter().position(|x| x == t).unwrap();
                assert_eq!(ta.frames[k], tb.frames[j]);
            }
        }
        assert_ne!(a[0].frames, a[1].frames);
        let rev: Vec<f64> = coarse.iter().rev().copied().collect();
        let r = sample_trajectories(&p, &c, 1, &rev, 3).unwrap();
        assert_eq!(r[0].frames, a[0].frames);
        assert_eq!(r[0].times[0], 1.0);
        assert_eq!(a[0].model_hash.as_deref(), Some(p.hash().as_str()));
    }
}
