use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::data::PreparedDataset;
use super::params::CgfParams;
use super::{CgfError, LOGVAR_CLAMP};
use crate::autodiff::{Gradients, Graph, MlpVars, Tensor, Var};
use crate::kinematics::{fk, fk_jacobian, flatten_keypoints, HandModel, JointConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_q: f64,
    pub lambda_j: f64,
    pub lambda_kl: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_q: 1.0,
            lambda_j: 10.0,
            lambda_kl: 1e-3,
            lambda_c: 50.0,
        }
    }
}

/// Weighted batch means of the loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub l_q: f64,
    pub l_j: f64,
    pub l_kl: f64,
    pub l_contact: f64,
}

/// `0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2)` with `ln sigma^2 = logvar`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

pub(crate) struct Bindings {
    pointnet: MlpVars,
    hand: MlpVars,
    trunk: MlpVars,
    mu: MlpVars,
    logvar: MlpVars,
    decoder: MlpVars,
}

impl Bindings {
    fn new(params: &CgfParams, g: &mut Graph) -> Self {
        Self {
            pointnet: params.pointnet.bind(g, true),
            hand: params.hand_encoder.bind(g, true),
            trunk: params.cvae_trunk.bind(g, true),
            mu: params.mu_head.bind(g, true),
            logvar: params.logvar_head.bind(g, true),
            decoder: params.decoder.bind(g, true),
        }
    }

    /// Gradients in [`crate::autodiff::Parameters`] order.
    fn gather(&self, params: &CgfParams, grads: &Gradients) -> Vec<Tensor> {
        let mut out = params.pointnet.gradients(&self.pointnet, grads);
        out.extend(params.hand_encoder.gradients(&self.hand, grads));
        out.extend(params.cvae_trunk.gradients(&self.trunk, grads));
        out.extend(params.mu_head.gradients(&self.mu, grads));
        out.extend(params.logvar_head.gradients(&self.logvar, grads));
        out.extend(params.decoder.gradients(&self.decoder, grads));
        out
    }
}

/// Keypoints of each continuous-form row, with Jacobians.
pub(crate) fn fk_rows(g: &mut Graph, model: &HandModel, q: Var) -> Result<Var, CgfError> {
    let width = 3 * model.num_keypoints();
    g.row_map::<CgfError>(q, width, |row| {
        let cfg = JointConfig::from_flat(row)?;
        let kp = flatten_keypoints(&fk(model, &cfg)?);
        let jac = fk_jacobian(model, &cfg)?;
        let mut j = Vec::with_capacity(jac.nrows() * jac.ncols());
        for r in 0..jac.nrows() {
            j.extend(jac.row(r).iter());
        }
        Ok((kp, j))
    })
}

/// Squared distance from each 3-vector row to its nearest cloud point
/// (lowest index on ties).
pub(crate) fn nearest_sq_distance(g: &mut Graph, points: Var, cloud: &Tensor) -> Result<Var, CgfError> {
    g.row_map::<CgfError>(points, 1, |p| {
        let mut best = f64::INFINITY;
        let mut arg = 0;
        for r in 0..cloud.rows() {
            let c = cloud.row_slice(r);
            let d = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d < best {
                best = d;
                arg = r;
            }
        }
        let c = cloud.row_slice(arg);
        let jac = (0..3).map(|i| 2.0 * (p[i] - c[i])).collect();
        Ok((vec![best], jac))
    })
}

pub(crate) struct LossGraph {
    pub graph: Graph,
    pub total: Var,
    bindings: Bindings,
    pub components: LossComponents,
}

/// Records the weighted batch loss. `noise[i]` is the standard-normal
/// sample used for demo `batch[i]`.
pub(crate) fn build_loss(
    params: &CgfParams,
    model: &HandModel,
    data: &PreparedDataset,
    batch: &[usize],
    noise: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<LossGraph, CgfError> {
    if batch.is_empty() {
        return Err(CgfError::Input("empty batch".into()));
    }
    if noise.len() != batch.len() || noise.iter().any(|n| n.len() != params.latent_dim()) {
        return Err(CgfError::Input("noise does not match the batch".into()));
    }
    let mut g = Graph::new();
    let b = Bindings::new(params, &mut g);
    let tips = model.fingertip_indices();
    let n_kp = model.num_keypoints();
    let weight_sum: f64 = batch.iter().map(|i| data.demos[*i].weight).sum();

    let mut features: HashMap<usize, Var> = HashMap::new();
    let mut total: Option<Var> = None;
    let mut comps = LossComponents::default();
    for (&i, eps) in batch.iter().zip(noise) {
        let demo = &data.demos[i];
        let frames = demo.hand_input.rows();
        if frames != params.frames {
            return Err(CgfError::Input(format!("demo `{}` has {frames} frames, model expects {}", demo.id, params.frames)));
        }
        let f_o = match features.get(&demo.cloud_index) {
            Some(v) => *v,
            None => {
                let c = g.constant(data.clouds[demo.cloud_index].clone());
                let f = params.pointnet.encode_graph(&mut g, &b.pointnet, c)?;
                features.insert(demo.cloud_index, f);
                f
            }
        };

        // encoder
        let hand_in = g.constant(demo.hand_input.clone());
        let h = params.hand_encoder.forward_graph(&mut g, &b.hand, hand_in)?;
        let h_cols = g.value(h).len();
        let h = g.reshape(h, 1, h_cols)?;
        let enc_in = g.concat_cols(&[f_o, h])?;
        let trunk = params.cvae_trunk.forward_graph(&mut g, &b.trunk, enc_in)?;
        let trunk = g.relu(trunk);
        let mu = params.mu_head.forward_graph(&mut g, &b.mu, trunk)?;
        let lv = params.logvar_head.forward_graph(&mut g, &b.logvar, trunk)?;
        let lv = g.clamp(lv, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1);

        // reparameterized latent
        let half = g.scale(lv, 0.5);
        let std = g.exp(half);
        let eps = g.constant(Tensor::row(eps));
        let noise_term = g.mul(std, eps)?;
        let z = g.add(mu, noise_term)?;

        // decoder at every demo phase
        let cond = g.concat_cols(&[f_o, z])?;
        let cond = g.repeat_rows(cond, frames)?;
        let t = g.constant(demo.times.clone());
        let dec_in = g.concat_cols(&[cond, t])?;
        let q_hat = params.decoder.forward_graph(&mut g, &b.decoder, dec_in)?;

        let inv_t = 1.0 / frames as f64;
        let q_t = g.constant(demo.q_target.clone());
        let dq = g.sub(q_hat, q_t)?;
        let dq = g.square(dq);
        let l_q = g.sum(dq);
        let l_q = g.scale(l_q, inv_t);

        let kp = fk_rows(&mut g, model, q_hat)?;
        let kp_t = g.constant(demo.kp_target.clone());
        let dk = g.sub(kp, kp_t)?;
        let dk = g.square(dk);
        let l_j = g.sum(dk);
        let l_j = g.scale(l_j, inv_t);

        let mu_sq = g.square(mu);
        let var = g.exp(lv);
        let kl = g.add(mu_sq, var)?;
        let kl = g.add_scalar(kl, -1.0);
        let kl = g.sub(kl, lv)?;
        let kl = g.sum(kl);
        let l_kl = g.scale(kl, 0.5);

        // contact at the grasp frame (row 0)
        let grasp = g.select_rows(kp, &[0])?;
        let grasp = g.reshape(grasp, n_kp, 3)?;
        let tip_pos = g.select_rows(grasp, &tips)?;
        let d = nearest_sq_distance(&mut g, tip_pos, &data.clouds[demo.cloud_index])?;
        let l_c = g.sum(d);

        let share = demo.weight / weight_sum;
        let parts = [
            (weights.lambda_q, l_q),
            (weights.lambda_j, l_j),
            (weights.lambda_kl, l_kl),
            (weights.lambda_c, l_c),
        ];
        let mut demo_total: Option<Var> = None;
        for (lambda, v) in parts {
            // a zero weight keeps the term out of the gradient entirely
            if lambda == 0.0 {
                continue;
            }
            let term = g.scale(v, lambda);
            demo_total = Some(match demo_total {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        let demo_total = match demo_total {
            Some(v) => v,
            None => g.constant(Tensor::scalar(0.0)),
        };
        let contrib = g.scale(demo_total, share);
        total = Some(match total {
            Some(acc) => g.add(acc, contrib)?,
            None => contrib,
        });

        comps.l_q += share * g.value(l_q).to_scalar();
        comps.l_j += share * g.value(l_j).to_scalar();
        comps.l_kl += share * g.value(l_kl).to_scalar();
        comps.l_contact += share * g.value(l_c).to_scalar();
    }
    let total = total.expect("batch is non-empty");
    comps.total = g.value(total).to_scalar();
    Ok(LossGraph {
        graph: g,
        total,
        bindings: b,
        components: comps,
    })
}

/// Loss value and components for a batch with fixed noise.
pub fn loss(
    params: &CgfParams,
    model: &HandModel,
    data: &PreparedDataset,
    batch: &[usize],
    noise: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<LossComponents, CgfError> {
    Ok(build_loss(params, model, data, batch, noise, weights)?.components)
}

/// Loss plus gradients for every parameter tensor, in
/// [`crate::autodiff::Parameters`] order.
pub fn loss_and_gradients(
    params: &CgfParams,
    model: &HandModel,
    data: &PreparedDataset,
    batch: &[usize],
    noise: &[Vec<f64>],
    weights: &LossWeights,
) -> Result<(LossComponents, Vec<Tensor>), CgfError> {
    let lg = build_loss(params, model, data, batch, noise, weights)?;
    let grads = lg.graph.backward(lg.total)?;
    Ok((lg.components, lg.bindings.gather(params, &grads)))
}
