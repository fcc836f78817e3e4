//! Learnable state and the scoring pipeline.
//!
//! For a triple `(h, r, t)` the hyperbolic score is
//!
//! ```text
//! c      = curvature(h, r)
//! head   = rotate_r(exp0(scale_r(hᴱ), c)) ⊕ exp0(εᴱ_r, c)
//! tail   = exp0(tᴱ, c)
//! s      = -d_c(head, tail)² + b_h + b_t
//! ```
//!
//! The Euclidean ablation replaces the maps by the identity, `⊕` by vector
//! addition and the distance by `2‖x - y‖`.

mod checkpoint;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{block_rotate_into, block_scale_into, dot, Ball, Curvature};

pub use checkpoint::{CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use params::{ParamGroup, Params, Table, UNIT_CURVATURE_PRE};

/// How the curvature of a triple's ball is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureMode {
    /// `c = 1` everywhere.
    #[serde(rename = "fixed")]
    FixedOne,
    /// One learnable `c = softplus(γ)` shared by all triples.
    Global,
    /// `c_r = softplus(γ_r)` per relation.
    #[serde(rename = "relation")]
    PerRelation,
    /// `c_{h,r}` from attention over head and relation embeddings.
    Attention,
}

impl CurvatureMode {
    pub const ALL: [CurvatureMode; 4] = [
        CurvatureMode::FixedOne,
        CurvatureMode::Global,
        CurvatureMode::PerRelation,
        CurvatureMode::Attention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CurvatureMode::FixedOne => "fixed",
            CurvatureMode::Global => "global",
            CurvatureMode::PerRelation => "relation",
            CurvatureMode::Attention => "attention",
        }
    }
}

impl std::str::FromStr for CurvatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CurvatureMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown curvature mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Hyperbolic,
    Euclidean,
}

impl GeometryKind {
    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::Hyperbolic => "hyperbolic",
            GeometryKind::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hyperbolic" => Ok(GeometryKind::Hyperbolic),
            "euclidean" => Ok(GeometryKind::Euclidean),
            _ => Err(Error::domain(format!("unknown geometry `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub curvature_mode: CurvatureMode,
    pub geometry: GeometryKind,
    /// Per-relation block scaling of the head (inter-level transform).
    pub use_inter_level: bool,
    /// Per-relation block rotation of the head (intra-level transform).
    pub use_intra_level: bool,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 32,
            curvature_mode: CurvatureMode::Attention,
            geometry: GeometryKind::Hyperbolic,
            use_inter_level: true,
            use_intra_level: true,
            init_scale: 1e-3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || !self.dim.is_multiple_of(2) {
            return Err(Error::domain(format!(
                "embedding dimension must be even and at least 2, got {}",
                self.dim
            )));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::domain(format!(
                "init_scale must be finite and non-negative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }
}

/// Numerically stable `ln(1 + eˣ)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Attention weights over the head and relation embeddings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionWeights {
    pub head: f64,
    pub relation: f64,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    n_entities: usize,
    n_relations: usize,
    params: Params,
    ball: Ball,
}

/// A head prepared for scoring many tails: the curvature and the translated,
/// transformed head point are computed once.
pub(crate) struct PreparedHead<'m> {
    model: &'m Model,
    curvature: Option<Curvature>,
    anchor: Vec<f64>,
    head_bias: f64,
    tail_buf: Vec<f64>,
    neg_buf: Vec<f64>,
    w_buf: Vec<f64>,
}

impl<'m> PreparedHead<'m> {
    pub(crate) fn score_tail(&mut self, t: usize) -> Result<f64> {
        let m = self.model;
        let t_emb = m.params[ParamGroup::EntityEmb].row(t);
        let t_bias = m.params[ParamGroup::EntityBias].row(t)[0];
        let sq = match self.curvature {
            Some(c) => {
                m.ball.exp0_into(t_emb, c, &mut self.tail_buf);
                m.ball
                    .sq_distance_with(&self.anchor, &self.tail_buf, c, &mut self.neg_buf, &mut self.w_buf)?
            }
            None => {
                let sq_norm: f64 = self
                    .anchor
                    .iter()
                    .zip(t_emb)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                4.0 * sq_norm
            }
        };
        Ok(-sq + self.head_bias + t_bias)
    }
}

impl Model {
    /// Fresh model with parameters drawn by [`Params::init`].
    pub fn new(config: ModelConfig, n_entities: usize, n_relations: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, n_entities, n_relations, seed);
        Ok(Model {
            config,
            n_entities,
            n_relations,
            params,
            ball: Ball::default(),
        })
    }

    pub fn from_params(
        config: ModelConfig,
        n_entities: usize,
        n_relations: usize,
        params: Params,
    ) -> Result<Self> {
        config.validate()?;
        let expected = Params::zeros(&config, n_entities, n_relations);
        for ((g, a), (_, b)) in params.iter().zip(expected.iter()) {
            if a.rows() != b.rows() || a.cols() != b.cols() {
                return Err(Error::domain(format!(
                    "parameter group {} has shape {}x{}, expected {}x{}",
                    g.name(),
                    a.rows(),
                    a.cols(),
                    b.rows(),
                    b.cols()
                )));
            }
        }
        Ok(Model {
            config,
            n_entities,
            n_relations,
            params,
            ball: Ball::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn ball(&self) -> &Ball {
        &self.ball
    }

    pub fn with_ball(mut self, ball: Ball) -> Self {
        self.ball = ball;
        self
    }

    pub(crate) fn check_entity(&self, e: usize) -> Result<()> {
        if e < self.n_entities {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "entity id {e} out of range (0..{})",
                self.n_entities
            )))
        }
    }

    pub(crate) fn check_relation(&self, r: usize) -> Result<()> {
        if r < self.n_relations {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "relation id {r} out of range (0..{})",
                self.n_relations
            )))
        }
    }

    /// Softmax attention of `a` over `hᴱ` and `rᴱ`.
    pub fn attention_weights(&self, h: usize, r: usize) -> Result<AttentionWeights> {
        self.check_entity(h)?;
        self.check_relation(r)?;
        let a = self.params[ParamGroup::AttentionA].row(0);
        let lh = dot(a, self.params[ParamGroup::EntityEmb].row(h));
        let lr = dot(a, self.params[ParamGroup::RelationEmb].row(r));
        let head = sigmoid(lh - lr);
        Ok(AttentionWeights {
            head,
            relation: sigmoid(lr - lh),
        })
    }

    /// Pre-activation whose softplus is the curvature of `(h, r)`.
    pub(crate) fn curvature_logit(&self, h: usize, r: usize) -> Result<Option<f64>> {
        Ok(match self.config.curvature_mode {
            CurvatureMode::FixedOne => None,
            CurvatureMode::Global => Some(self.params[ParamGroup::CurvaturePre].row(0)[0]),
            CurvatureMode::PerRelation => Some(self.params[ParamGroup::CurvaturePre].row(r)[0]),
            CurvatureMode::Attention => {
                let w = self.attention_weights(h, r)?;
                let he = self.params[ParamGroup::EntityEmb].row(h);
                let re = self.params[ParamGroup::RelationEmb].row(r);
                let p = self.params[ParamGroup::AttentionP].row(0);
                let mut z = 0.0;
                for ((pi, hi), ri) in p.iter().zip(he).zip(re) {
                    z += pi * (w.head * hi + w.relation * ri);
                }
                Some(z)
            }
        })
    }

    /// Curvature of the ball used for `(h, r, ·)`.
    pub fn curvature(&self, h: usize, r: usize) -> Result<Curvature> {
        self.check_entity(h)?;
        self.check_relation(r)?;
        if self.config.geometry == GeometryKind::Euclidean {
            return Err(Error::domain("the Euclidean model has no curvature"));
        }
        match self.curvature_logit(h, r)? {
            None => Ok(Curvature::ONE),
            Some(z) => Curvature::new(softplus(z))
                .map_err(|_| Error::numeric("curvature", format!("softplus({z}) is not a positive curvature"))),
        }
    }

    /// Tangent-space head after the enabled scaling and rotation.
    fn transformed_tangent(&self, h: usize, r: usize) -> Vec<f64> {
        let d = self.config.dim;
        let he = self.params[ParamGroup::EntityEmb].row(h);
        let mut u = he.to_vec();
        if self.config.use_inter_level {
            block_scale_into(he, self.params[ParamGroup::Scale].row(r), &mut u);
        }
        if self.config.use_intra_level {
            let mut rotated = vec![0.0; d];
            block_rotate_into(&u, self.params[ParamGroup::Theta].row(r), &mut rotated);
            u = rotated;
        }
        u
    }

    /// Head mapped onto the ball of curvature `c` with the relation's scaling
    /// and rotation applied.
    pub fn transform_head(&self, h: usize, r: usize, c: Curvature) -> Result<Vec<f64>> {
        self.check_entity(h)?;
        self.check_relation(r)?;
        let he = self.params[ParamGroup::EntityEmb].row(h);
        let d = self.config.dim;
        let mut u = he.to_vec();
        if self.config.use_inter_level {
            block_scale_into(he, self.params[ParamGroup::Scale].row(r), &mut u);
        }
        let mut x = vec![0.0; d];
        self.ball.exp0_into(&u, c, &mut x);
        if self.config.use_intra_level {
            let mut rotated = vec![0.0; d];
            block_rotate_into(&x, self.params[ParamGroup::Theta].row(r), &mut rotated);
            x = rotated;
        }
        Ok(x)
    }

    fn prepare_with(&self, h: usize, r: usize, curvature: Option<Curvature>) -> Result<PreparedHead<'_>> {
        let d = self.config.dim;
        let trans = self.params[ParamGroup::Translation].row(r);
        let anchor = match curvature {
            Some(c) => {
                let x = self.transform_head(h, r, c)?;
                let mut eps = vec![0.0; d];
                self.ball.exp0_into(trans, c, &mut eps);
                let mut y = vec![0.0; d];
                self.ball.mobius_add_into(&x, &eps, c, &mut y)?;
                y
            }
            None => {
                let mut u = self.transformed_tangent(h, r);
                for (a, b) in u.iter_mut().zip(trans) {
                    *a += b;
                }
                u
            }
        };
        Ok(PreparedHead {
            model: self,
            curvature,
            anchor,
            head_bias: self.params[ParamGroup::EntityBias].row(h)[0],
            tail_buf: vec![0.0; d],
            neg_buf: vec![0.0; d],
            w_buf: vec![0.0; d],
        })
    }

    pub(crate) fn prepare(&self, h: usize, r: usize) -> Result<PreparedHead<'_>> {
        let curvature = match self.config.geometry {
            GeometryKind::Hyperbolic => Some(self.curvature(h, r)?),
            GeometryKind::Euclidean => {
                self.check_entity(h)?;
                self.check_relation(r)?;
                None
            }
        };
        self.prepare_with(h, r, curvature)
    }

    /// Plausibility score of `(h, r, t)`; larger is more plausible.
    pub fn score(&self, h: usize, r: usize, t: usize) -> Result<f64> {
        self.check_entity(t)?;
        self.prepare(h, r)?.score_tail(t)
    }

    /// Hyperbolic score evaluated on a caller-chosen curvature, bypassing the
    /// curvature head.
    pub fn score_with_curvature(&self, h: usize, r: usize, t: usize, c: Curvature) -> Result<f64> {
        self.check_entity(h)?;
        self.check_relation(r)?;
        self.check_entity(t)?;
        self.prepare_with(h, r, Some(c))?.score_tail(t)
    }

    /// Scores of `(h, r, j)` for every entity `j`, sharing the curvature and
    /// head computation across candidates.
    pub fn score_against_all(&self, h: usize, r: usize) -> Result<Vec<f64>> {
        let mut prepared = self.prepare(h, r)?;
        (0..self.n_entities).map(|t| prepared.score_tail(t)).collect()
    }

    /// Rounds all parameters to `f32`, matching what a checkpoint stores.
    pub fn round_to_f32(&mut self) {
        self.params.round_to_f32();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp0, hyp_distance, mobius_add};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn tiny(config: ModelConfig) -> Model {
        Model::new(config, 3, 2, 0).unwrap()
    }

    fn identity_config(d: usize) -> ModelConfig {
        ModelConfig {
            dim: d,
            curvature_mode: CurvatureMode::FixedOne,
            geometry: GeometryKind::Hyperbolic,
            use_inter_level: false,
            use_intra_level: false,
            init_scale: 1e-3,
        }
    }

    fn randomize(model: &mut Model, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in model.params_mut().iter_mut() {
            for v in t.as_mut_slice() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }

    #[test]
    fn enum_names_parse_back() {
        for m in CurvatureMode::ALL {
            assert_eq!(m.name().parse::<CurvatureMode>().unwrap(), m);
        }
        for g in [GeometryKind::Hyperbolic, GeometryKind::Euclidean] {
            assert_eq!(g.name().parse::<GeometryKind>().unwrap(), g);
        }
        assert!("hyperbolicish".parse::<GeometryKind>().is_err());
        assert!("per_relation".parse::<CurvatureMode>().is_err());
    }

    #[test]
    fn config_rejects_odd_dimension() {
        let cfg = ModelConfig {
            dim: 7,
            ..ModelConfig::default()
        };
        assert!(Model::new(cfg, 3, 2, 0).is_err());
        let cfg = ModelConfig {
            dim: 0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn softplus_and_sigmoid_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((softplus(2.0) - 2.126_928_011_042_972_7).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn attention_equal_logits_split_evenly() {
        let mut m = tiny(ModelConfig {
            dim: 2,
            ..ModelConfig::default()
        });
        m.params_mut()[ParamGroup::AttentionA].row_mut(0).copy_from_slice(&[1.0, 0.0]);
        m.params_mut()[ParamGroup::EntityEmb].row_mut(0).copy_from_slice(&[0.4, 1.0]);
        m.params_mut()[ParamGroup::RelationEmb].row_mut(1).copy_from_slice(&[0.4, -3.0]);
        let w = m.attention_weights(0, 1).unwrap();
        assert_eq!(w.head, 0.5);
        assert_eq!(w.relation, 0.5);
    }

    #[test]
    fn attention_zero_projection_gives_ln2() {
        let mut m = tiny(ModelConfig {
            dim: 2,
            ..ModelConfig::default()
        });
        m.params_mut()[ParamGroup::AttentionP].as_mut_slice().fill(0.0);
        let c = m.curvature(1, 0).unwrap();
        assert!((c.value() - std::f64::consts::LN_2).abs() < 1e-16);
    }

    #[test]
    fn attention_curvature_example() {
        // aᵀhᴱ = 1, aᵀrᴱ = 0, pᵀv = 2
        let mut m = tiny(ModelConfig {
            dim: 2,
            ..ModelConfig::default()
        });
        let p = m.params_mut();
        p[ParamGroup::AttentionA].row_mut(0).copy_from_slice(&[1.0, 0.0]);
        p[ParamGroup::EntityEmb].row_mut(0).copy_from_slice(&[1.0, 2.0]);
        p[ParamGroup::RelationEmb].row_mut(0).copy_from_slice(&[0.0, 2.0]);
        p[ParamGroup::AttentionP].row_mut(0).copy_from_slice(&[0.0, 1.0]);
        let w = m.attention_weights(0, 0).unwrap();
        assert!((w.head - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((w.relation - 0.268_941_421_369_995_1).abs() < 1e-15);
        let c = m.curvature(0, 0).unwrap();
        assert!((c.value() - 2.126_928_011_042_972_7).abs() < 1e-14);
    }

    #[test]
    fn curvature_modes() {
        let mut m = tiny(ModelConfig {
            dim: 2,
            curvature_mode: CurvatureMode::PerRelation,
            ..ModelConfig::default()
        });
        m.params_mut()[ParamGroup::CurvaturePre].row_mut(1)[0] = 2.0;
        assert!((m.curvature(0, 0).unwrap().value() - 1.0).abs() < 1e-15);
        assert!((m.curvature(0, 1).unwrap().value() - softplus(2.0)).abs() < 1e-15);
        let fixed = tiny(identity_config(2));
        assert_eq!(fixed.curvature(2, 1).unwrap(), Curvature::ONE);
        assert!(fixed.curvature(3, 0).is_err());
        assert!(fixed.curvature(0, 2).is_err());
    }

    #[test]
    fn curvature_strictly_positive_for_extreme_logits() {
        let mut m = tiny(ModelConfig {
            dim: 2,
            curvature_mode: CurvatureMode::Global,
            ..ModelConfig::default()
        });
        for z in [-700.0, -30.0, 0.0, 30.0, 700.0] {
            m.params_mut()[ParamGroup::CurvaturePre].row_mut(0)[0] = z;
            assert!(m.curvature(0, 0).unwrap().value() > 0.0);
        }
    }

    #[test]
    fn transform_head_identity_and_rotation() {
        let mut m = tiny(ModelConfig {
            dim: 2,
            curvature_mode: CurvatureMode::FixedOne,
            ..ModelConfig::default()
        });
        m.params_mut()[ParamGroup::EntityEmb].row_mut(0).copy_from_slice(&[0.3, 0.4]);
        let c = Curvature::ONE;
        // unit scale, zero angle
        assert_eq!(m.transform_head(0, 0, c).unwrap(), exp0(&[0.3, 0.4], c).unwrap());
        // rotation only commutes with the map
        m.params_mut()[ParamGroup::Theta].row_mut(0)[0] = 0.7;
        let rotated = crate::geometry::block_rotate(&[0.3, 0.4], &[0.7]).unwrap();
        let lhs = m.transform_head(0, 0, c).unwrap();
        let rhs = exp0(&rotated, c).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn transform_head_step_by_step_oracle() {
        // d = 2, hᴱ = (0.3, 0.4), k = 2, θ = π/2, c = 1:
        // scale → (0.6, 0.8) (norm 1), exp0 → tanh(1)·(0.6, 0.8), rotate a quarter turn.
        let mut m = tiny(ModelConfig {
            dim: 2,
            curvature_mode: CurvatureMode::FixedOne,
            ..ModelConfig::default()
        });
        m.params_mut()[ParamGroup::EntityEmb].row_mut(0).copy_from_slice(&[0.3, 0.4]);
        m.params_mut()[ParamGroup::Scale].row_mut(0)[0] = 2.0;
        m.params_mut()[ParamGroup::Theta].row_mut(0)[0] = FRAC_PI_2;
        let x = m.transform_head(0, 0, Curvature::ONE).unwrap();
        let t = 1f64.tanh();
        let expected = [-0.8 * t, 0.6 * t];
        assert!((x[0] - expected[0]).abs() < 1e-15);
        assert!((x[1] - expected[1]).abs() < 1e-15);
        assert!((x[0] - -0.609_275_324_764_611_9).abs() < 1e-15);
        assert!((x[1] - 0.456_956_493_573_458_9).abs() < 1e-15);
    }

    #[test]
    fn score_identity_cases() {
        let mut m = tiny(identity_config(2));
        let p = m.params_mut();
        p[ParamGroup::Translation].as_mut_slice().fill(0.0);
        p[ParamGroup::EntityEmb].row_mut(0).copy_from_slice(&[0.2, -0.1]);
        p[ParamGroup::EntityEmb].row_mut(1).copy_from_slice(&[0.2, -0.1]);
        assert_eq!(m.score(0, 0, 1).unwrap(), 0.0);
        m.params_mut()[ParamGroup::EntityBias].row_mut(0)[0] = 0.3;
        m.params_mut()[ParamGroup::EntityBias].row_mut(1)[0] = 0.2;
        assert!((m.score(0, 0, 1).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn score_pipeline_oracle() {
        // d = 2, c = 1, hᴱ = (0.3, 0.4), tᴱ = (0.1, 0), identity transforms
        let mut m = tiny(ModelConfig {
            dim: 2,
            curvature_mode: CurvatureMode::FixedOne,
            ..ModelConfig::default()
        });
        let p = m.params_mut();
        p[ParamGroup::Translation].as_mut_slice().fill(0.0);
        p[ParamGroup::EntityEmb].row_mut(0).copy_from_slice(&[0.3, 0.4]);
        p[ParamGroup::EntityEmb].row_mut(1).copy_from_slice(&[0.1, 0.0]);
        // independent evaluation: x = tanh(0.5)/0.5·(0.3,0.4), y = (tanh(0.1),0),
        // d = 2·atanh(‖(-x)⊕y‖), frozen from a float64 reference computation.
        let expected = -0.808_233_423_375_309_8;
        assert!((m.score(0, 0, 1).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn ablation_identity_reduces_to_plain_distance() {
        let mut m = Model::new(identity_config(4), 5, 2, 9).unwrap();
        randomize(&mut m, 1, 0.4);
        m.params_mut()[ParamGroup::Translation].as_mut_slice().fill(0.0);
        for h in 0..5 {
            for t in 0..5 {
                let he = m.params()[ParamGroup::EntityEmb].row(h).to_vec();
                let te = m.params()[ParamGroup::EntityEmb].row(t).to_vec();
                let c = Curvature::ONE;
                let d = hyp_distance(&exp0(&he, c).unwrap(), &exp0(&te, c).unwrap(), c).unwrap();
                let b = m.params()[ParamGroup::EntityBias].row(h)[0]
                    + m.params()[ParamGroup::EntityBias].row(t)[0];
                let s = m.score(h, 1, t).unwrap();
                assert!((s - (-d * d + b)).abs() <= 4.0 * f64::EPSILON * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn translation_only_model_matches_reduced_scorer() {
        let mut m = Model::new(identity_config(4), 4, 2, 9).unwrap();
        randomize(&mut m, 2, 0.5);
        let c = Curvature::ONE;
        for h in 0..4 {
            for t in 0..4 {
                let p = m.params();
                let head = exp0(p[ParamGroup::EntityEmb].row(h), c).unwrap();
                let eps = exp0(p[ParamGroup::Translation].row(1), c).unwrap();
                let tail = exp0(p[ParamGroup::EntityEmb].row(t), c).unwrap();
                let d = hyp_distance(&mobius_add(&head, &eps, c).unwrap(), &tail, c).unwrap();
                let b = p[ParamGroup::EntityBias].row(h)[0] + p[ParamGroup::EntityBias].row(t)[0];
                assert!((m.score(h, 1, t).unwrap() - (-d * d + b)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn score_against_all_is_bitwise_loop() {
        for mode in CurvatureMode::ALL {
            for geometry in [GeometryKind::Hyperbolic, GeometryKind::Euclidean] {
                let cfg = ModelConfig {
                    dim: 4,
                    curvature_mode: mode,
                    geometry,
                    ..ModelConfig::default()
                };
                let mut m = Model::new(cfg, 5, 3, 1).unwrap();
                randomize(&mut m, 3, 0.8);
                for h in 0..5 {
                    for r in 0..3 {
                        let all = m.score_against_all(h, r).unwrap();
                        let each: Vec<f64> = (0..5).map(|t| m.score(h, r, t).unwrap()).collect();
                        assert_eq!(all, each);
                    }
                }
            }
        }
    }

    #[test]
    fn score_against_all_single_entity() {
        let m = Model::new(ModelConfig::default(), 1, 2, 4).unwrap();
        assert_eq!(m.score_against_all(0, 1).unwrap(), vec![m.score(0, 1, 0).unwrap()]);
    }

    #[test]
    fn fresh_model_scores_are_tiny() {
        // With zero translation the score is -d(exp0 h, exp0 t)^2 and near the
        // origin d ~ 2|h - t|, so E|score| ~ 8 d sigma^2. Below 1e-4 needs small d.
        let mut m = Model::new(identity_config(2), 20, 4, 5).unwrap();
        m.params_mut()[ParamGroup::Translation].as_mut_slice().fill(0.0);
        for h in 0..20 {
            for t in 0..20 {
                assert!(m.score(h, 0, t).unwrap().abs() < 1e-4);
            }
        }
        // at d = 32 the near-origin bound 4|h - t|^2 (1 + o(1)) still holds
        let mut m = Model::new(identity_config(32), 20, 4, 5).unwrap();
        m.params_mut()[ParamGroup::Translation].as_mut_slice().fill(0.0);
        let emb = &m.params()[ParamGroup::EntityEmb];
        for h in 0..20 {
            for t in 0..20 {
                let diff: f64 = emb.row(h).iter().zip(emb.row(t)).map(|(a, b)| (a - b) * (a - b)).sum();
                let s = m.score(h, 0, t).unwrap();
                assert!(s.abs() <= 4.0 * diff * (1.0 + 1e-3) + 1e-18);
            }
        }
    }

    #[test]
    fn euclidean_limit_matches_hyperbolic_small_curvature() {
        let hyp = ModelConfig {
            dim: 4,
            curvature_mode: CurvatureMode::FixedOne,
            ..ModelConfig::default()
        };
        let euc = ModelConfig {
            geometry: GeometryKind::Euclidean,
            ..hyp
        };
        let mut mh = Model::new(hyp, 6, 2, 3).unwrap();
        randomize(&mut mh, 8, 0.3);
        let me = Model::from_params(euc, 6, 2, mh.params().clone()).unwrap();
        let c = Curvature::new(1e-6).unwrap();
        for h in 0..6 {
            for t in 0..6 {
                let a = mh.score_with_curvature(h, 1, t, c).unwrap();
                let b = me.score(h, 1, t).unwrap();
                assert!((a - b).abs() <= 1e-3 * b.abs().max(1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn out_of_range_ids_are_domain_errors() {
        let m = tiny(ModelConfig::default());
        assert!(matches!(m.score(3, 0, 0), Err(Error::Domain(_))));
        assert!(matches!(m.score(0, 2, 0), Err(Error::Domain(_))));
        assert!(matches!(m.score(0, 0, 3), Err(Error::Domain(_))));
        assert!(m.score_against_all(0, 5).is_err());
    }

    #[test]
    fn from_params_checks_shapes() {
        let cfg = ModelConfig::default();
        let p = Params::zeros(&cfg, 3, 2);
        assert!(Model::from_params(cfg, 3, 2, p.clone()).is_ok());
        assert!(Model::from_params(cfg, 4, 2, p).is_err());
    }
}
