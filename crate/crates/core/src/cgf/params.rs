use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CgfError, ACTUATOR_WIDTH, CONFIG_WIDTH, CVAE_HIDDEN, FRAMES, HAND_FEATURE_DIM, LATENT_DIM, OBJECT_FEATURE_DIM};
use crate::autodiff::{Activation, Checkpoint, Mlp, MlpSpec, Parameters, PointNet, Tensor, POINTNET_WIDTHS};

/// Layer layout of every sub-network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CgfArchitecture {
    pub frames: usize,
    pub pointnet: MlpSpec,
    pub hand_encoder: MlpSpec,
    pub cvae_trunk: MlpSpec,
    pub mu_head: MlpSpec,
    pub logvar_head: MlpSpec,
    pub decoder: MlpSpec,
}

impl CgfArchitecture {
    pub fn standard(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = |w: &[usize]| MlpSpec::new(w, rng.next_u64());
        let pointnet = spec(&POINTNET_WIDTHS);
        let hand_encoder = spec(&[ACTUATOR_WIDTH, 256, 256, HAND_FEATURE_DIM]);
        let cvae_trunk = spec(&[OBJECT_FEATURE_DIM + FRAMES * HAND_FEATURE_DIM, CVAE_HIDDEN]);
        let mu_head = spec(&[CVAE_HIDDEN, LATENT_DIM]);
        let logvar_head = spec(&[CVAE_HIDDEN, LATENT_DIM]);
        let decoder = spec(&[OBJECT_FEATURE_DIM + LATENT_DIM + 1, 512, 256, CONFIG_WIDTH]);
        Self {
            frames: FRAMES,
            pointnet,
            hand_encoder,
            cvae_trunk,
            mu_head,
            logvar_head,
            decoder,
        }
    }
}

/// All network weights of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CgfParams {
    pub pointnet: PointNet,
    pub hand_encoder: Mlp,
    /// Shared encoder layer, followed by a ReLU and the two heads.
    pub cvae_trunk: Mlp,
    pub mu_head: Mlp,
    pub logvar_head: Mlp,
    pub decoder: Mlp,
    pub frames: usize,
}

impl CgfParams {
    pub fn new(seed: u64) -> Self {
        Self::from_architecture(&CgfArchitecture::standard(seed)).expect("standard layout is valid")
    }

    pub fn from_architecture(arch: &CgfArchitecture) -> Result<Self, CgfError> {
        if arch.pointnet.layer_widths != POINTNET_WIDTHS {
            return Err(CgfError::Input("unsupported point encoder layout".into()));
        }
        let mut pointnet = PointNet::new(arch.pointnet.seed);
        if *pointnet.mlp().spec() != arch.pointnet {
            *pointnet.mlp_mut() = Mlp::new(arch.pointnet.clone())?;
        }
        let params = Self {
            pointnet,
            hand_encoder: Mlp::new(arch.hand_encoder.clone())?,
            cvae_trunk: Mlp::new(arch.cvae_trunk.clone())?,
            mu_head: Mlp::new(arch.mu_head.clone())?,
            logvar_head: Mlp::new(arch.logvar_head.clone())?,
            decoder: Mlp::new(arch.decoder.clone())?,
            frames: arch.frames,
        };
        params.check_layout()?;
        Ok(params)
    }

    /// Every weight and bias zero.
    pub fn zeros() -> Self {
        let mut p = Self::new(0);
        for t in p.params_mut() {
            t.data_mut().fill(0.0);
        }
        p
    }

    pub fn architecture(&self) -> CgfArchitecture {
        CgfArchitecture {
            frames: self.frames,
            pointnet: self.pointnet.mlp().spec().clone(),
            hand_encoder: self.hand_encoder.spec().clone(),
            cvae_trunk: self.cvae_trunk.spec().clone(),
            mu_head: self.mu_head.spec().clone(),
            logvar_head: self.logvar_head.spec().clone(),
            decoder: self.decoder.spec().clone(),
        }
    }

    /// Replaces the decoder's hidden activation (a linear decoder is handy
    /// for checking time derivatives).
    pub fn with_decoder_activation(mut self, activation: Activation) -> Self {
        let mut spec = self.decoder.spec().clone();
        spec.activation = activation;
        let mut d = Mlp::zeros(spec).expect("same widths");
        for (dst, src) in d.params_mut().into_iter().zip(self.decoder.named_params()) {
            *dst = src.1.clone();
        }
        self.decoder = d;
        self
    }

    fn check_layout(&self) -> Result<(), CgfError> {
        let bad = |what: &str| Err(CgfError::Input(format!("inconsistent layout: {what}")));
        let feature = self.pointnet.output_width();
        let hand = self.hand_encoder.spec();
        let latent = self.mu_head.spec().output_width();
        if hand.input_width() != ACTUATOR_WIDTH {
            return bad("hand encoder input");
        }
        if self.cvae_trunk.spec().input_width() != feature + self.frames * hand.output_width() {
            return bad("encoder input width");
        }
        let hidden = self.cvae_trunk.spec().output_width();
        if self.mu_head.spec().input_width() != hidden || self.logvar_head.spec().input_width() != hidden {
            return bad("encoder heads");
        }
        if self.logvar_head.spec().output_width() != latent {
            return bad("head widths differ");
        }
        if self.decoder.spec().input_width() != feature + latent + 1 {
            return bad("decoder input width");
        }
        if self.decoder.spec().output_width() != CONFIG_WIDTH {
            return bad("decoder output width");
        }
        Ok(())
    }

    pub fn object_feature_dim(&self) -> usize {
        self.pointnet.output_width()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.spec().output_width()
    }

    pub fn cvae_input_width(&self) -> usize {
        self.cvae_trunk.spec().input_width()
    }

    pub fn decoder_widths(&self) -> &[usize] {
        &self.decoder.spec().layer_widths
    }

    /// SHA-256 over parameter names, shapes and values.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.named_params() {
            h.update(name.as_bytes());
            h.update((t.rows() as u64).to_le_bytes());
            h.update((t.cols() as u64).to_le_bytes());
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            metadata: vec![
                (
                    "architecture".into(),
                    serde_json::to_string(&self.architecture()).expect("serializable"),
                ),
                ("model_hash".into(), self.hash()),
            ],
            tensors: self.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect(),
            optimizer: None,
            rng: None,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CgfError> {
        let arch: CgfArchitecture = ck
            .meta("architecture")
            .ok_or_else(|| CgfError::Input("checkpoint lacks an architecture entry".into()))
            .and_then(|s| serde_json::from_str(s).map_err(|e| CgfError::Input(format!("architecture entry: {e}"))))?;
        let mut params = Self::from_architecture(&arch)?;
        let names: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(params.params_mut()) {
            let t = ck
                .tensor(name)
                .ok_or_else(|| CgfError::Input(format!("checkpoint lacks tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(CgfError::Input(format!("tensor `{name}` has the wrong shape")));
            }
            *slot = t.clone();
        }
        Ok(params)
    }
}

fn prefixed<'a>(prefix: &str, p: Vec<(String, &'a Tensor)>) -> impl Iterator<Item = (String, &'a Tensor)> + 'a {
    let prefix = prefix.to_string();
    p.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t))
}

impl Parameters for CgfParams {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        prefixed("pointnet", self.pointnet.named_params())
            .chain(prefixed("hand_encoder", self.hand_encoder.named_params()))
            .chain(prefixed("cvae_trunk", self.cvae_trunk.named_params()))
            .chain(prefixed("mu_head", self.mu_head.named_params()))
            .chain(prefixed("logvar_head", self.logvar_head.named_params()))
            .chain(prefixed("decoder", self.decoder.named_params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.pointnet.params_mut();
        out.extend(self.hand_encoder.params_mut());
        out.extend(self.cvae_trunk.params_mut());
        out.extend(self.mu_head.params_mut());
        out.extend(self.logvar_head.params_mut());
        out.extend(self.decoder.params_mut());
        out
    }
}
