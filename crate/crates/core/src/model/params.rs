use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{CurvatureMode, ModelConfig};

/// Learnable parameter groups, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    EntityEmb,
    EntityBias,
    RelationEmb,
    Scale,
    Theta,
    Translation,
    AttentionA,
    AttentionP,
    CurvaturePre,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 9] = [
        ParamGroup::EntityEmb,
        ParamGroup::EntityBias,
        ParamGroup::RelationEmb,
        ParamGroup::Scale,
        ParamGroup::Theta,
        ParamGroup::Translation,
        ParamGroup::AttentionA,
        ParamGroup::AttentionP,
        ParamGroup::CurvaturePre,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::EntityEmb => "entity_emb",
            ParamGroup::EntityBias => "entity_bias",
            ParamGroup::RelationEmb => "relation_emb",
            ParamGroup::Scale => "scale",
            ParamGroup::Theta => "theta",
            ParamGroup::Translation => "translation",
            ParamGroup::AttentionA => "attention_a",
            ParamGroup::AttentionP => "attention_p",
            ParamGroup::CurvaturePre => "curvature_pre",
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Dense row-major matrix of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Table {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Table {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// All learnable parameters of a model, one [`Table`] per [`ParamGroup`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    tables: Vec<Table>,
}

/// `softplus⁻¹(1)`: pre-activation giving an initial curvature of exactly one.
pub const UNIT_CURVATURE_PRE: f64 = 0.541_324_854_612_918_1;

impl Params {
    /// Zero-filled tables with the shapes implied by `config`.
    pub fn zeros(config: &ModelConfig, n_entities: usize, n_relations: usize) -> Self {
        let d = config.dim;
        let curvature_rows = match config.curvature_mode {
            CurvatureMode::FixedOne | CurvatureMode::Attention => 0,
            CurvatureMode::Global => 1,
            CurvatureMode::PerRelation => n_relations,
        };
        let tables = ParamGroup::ALL
            .iter()
            .map(|g| match g {
                ParamGroup::EntityEmb => Table::zeros(n_entities, d),
                ParamGroup::EntityBias => Table::zeros(n_entities, 1),
                ParamGroup::RelationEmb => Table::zeros(n_relations, d),
                ParamGroup::Scale | ParamGroup::Theta => Table::zeros(n_relations, d / 2),
                ParamGroup::Translation => Table::zeros(n_relations, d),
                ParamGroup::AttentionA | ParamGroup::AttentionP => Table::zeros(1, d),
                ParamGroup::CurvaturePre => Table::zeros(curvature_rows, 1),
            })
            .collect();
        Params { tables }
    }

    /// Initial parameters: Gaussian embeddings, translations and attention
    /// vectors with standard deviation `init_scale`; unit scales, zero angles,
    /// zero biases and curvature pre-activations giving `c = 1`.
    pub fn init(config: &ModelConfig, n_entities: usize, n_relations: usize, seed: u64) -> Self {
        let mut params = Params::zeros(config, n_entities, n_relations);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_scale.abs()).expect("finite init scale");
        for group in ParamGroup::ALL {
            let table = &mut params[group];
            match group {
                ParamGroup::EntityEmb
                | ParamGroup::RelationEmb
                | ParamGroup::Translation
                | ParamGroup::AttentionA
                | ParamGroup::AttentionP => {
                    for v in table.as_mut_slice() {
                        *v = normal.sample(&mut rng);
                    }
                }
                ParamGroup::Scale => table.as_mut_slice().fill(1.0),
                ParamGroup::CurvaturePre => table.as_mut_slice().fill(UNIT_CURVATURE_PRE),
                ParamGroup::EntityBias | ParamGroup::Theta => {}
            }
        }
        params
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamGroup, &Table)> {
        ParamGroup::ALL.into_iter().zip(&self.tables)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamGroup, &mut Table)> {
        ParamGroup::ALL.into_iter().zip(self.tables.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.tables.iter().all(Table::is_finite)
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tables {
            for v in t.as_mut_slice() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tables.iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Index<ParamGroup> for Params {
    type Output = Table;

    fn index(&self, g: ParamGroup) -> &Table {
        &self.tables[g.index()]
    }
}

impl IndexMut<ParamGroup> for Params {
    fn index_mut(&mut self, g: ParamGroup) -> &mut Table {
        &mut self.tables[g.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::softplus;

    #[test]
    fn unit_curvature_pre_activation() {
        assert!((softplus(UNIT_CURVATURE_PRE) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::default();
        assert_eq!(Params::init(&cfg, 7, 4, 11), Params::init(&cfg, 7, 4, 11));
        assert_ne!(Params::init(&cfg, 7, 4, 11), Params::init(&cfg, 7, 4, 12));
    }

    #[test]
    fn zero_init_scale_gives_zero_gaussians() {
        let cfg = ModelConfig {
            init_scale: 0.0,
            curvature_mode: CurvatureMode::PerRelation,
            ..ModelConfig::default()
        };
        let p = Params::init(&cfg, 5, 2, 3);
        for g in [
            ParamGroup::EntityEmb,
            ParamGroup::RelationEmb,
            ParamGroup::Translation,
            ParamGroup::AttentionA,
            ParamGroup::AttentionP,
        ] {
            assert!(p[g].as_slice().iter().all(|v| *v == 0.0), "{}", g.name());
        }
        assert!(p[ParamGroup::Scale].as_slice().iter().all(|v| *v == 1.0));
        assert!(p[ParamGroup::Theta].as_slice().iter().all(|v| *v == 0.0));
        assert_eq!(p[ParamGroup::CurvaturePre].rows(), 2);
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = ModelConfig {
            dim: 6,
            curvature_mode: CurvatureMode::Global,
            ..ModelConfig::default()
        };
        let p = Params::zeros(&cfg, 10, 4);
        assert_eq!((p[ParamGroup::EntityEmb].rows(), p[ParamGroup::EntityEmb].cols()), (10, 6));
        assert_eq!(p[ParamGroup::Scale].cols(), 3);
        assert_eq!(p[ParamGroup::CurvaturePre].rows(), 1);
        assert_eq!(p.len(), 60 + 10 + 24 + 12 + 12 + 24 + 6 + 6 + 1);
    }
}
