use super::{
    pool_and_normalize, EmbeddingVector, Model, PositionAssignment, PositionEmbeddingMatrix,
    RoPEFrequencies, TableRef,
};
use crate::chunking::pcw_encode;
use crate::error::{config_err, Error, Result};
use crate::position::{
    build_interpolated_matrix, ntk_frequencies, plan_positions, ExtensionSpec, PositionPlan,
    Strategy, TableKind,
};
use crate::tokenizer::TokenSequence;
use crate::tuner::TuneMode;

/// A model bound to one extension strategy, with any derived tables
/// (interpolated positions, NTK frequencies) built once up front.
#[derive(Debug, Clone)]
pub struct PreparedEncoder<'m> {
    model: &'m Model,
    spec: ExtensionSpec,
    interpolated: Option<PositionEmbeddingMatrix>,
    ntk: Option<RoPEFrequencies>,
}

impl<'m> PreparedEncoder<'m> {
    pub fn new(model: &'m Model, spec: ExtensionSpec) -> Result<Self> {
        let mode = model.position_mode();
        if spec.original_context() != model.original_context() {
            return Err(config_err(format!(
                "spec original context {} does not match the model's {}",
                spec.original_context(),
                model.original_context()
            )));
        }
        if !spec.strategy().supports(mode) {
            return Err(Error::Mode(format!(
                "strategy `{}` is not defined for {mode} position mode",
                spec.strategy()
            )));
        }
        let mut interpolated = None;
        let mut ntk = None;
        match spec.strategy() {
            Strategy::Pi if mode == super::PositionMode::Absolute => {
                let table = model
                    .position_table()
                    .ok_or_else(|| Error::Mode("model has no absolute position table".into()))?;
                interpolated = Some(build_interpolated_matrix(table, spec.scale()));
            }
            Strategy::Ntk => {
                let lambda = spec
                    .ntk_lambda()
                    .ok_or_else(|| config_err("ntk strategy without lambda"))?;
                ntk = Some(ntk_frequencies(
                    model.config().head_dim(),
                    model.config().rope_base,
                    lambda,
                )?);
            }
            Strategy::TunedPi | Strategy::TunedRp => {
                let wanted = if spec.strategy() == Strategy::TunedPi {
                    TuneMode::PiAnchored
                } else {
                    TuneMode::RpSuffix
                };
                let ext = model.extended_table().ok_or_else(|| {
                    Error::Mode(format!(
                        "strategy `{}` needs a tuned extended position table",
                        spec.strategy()
                    ))
                })?;
                if ext.mode != wanted {
                    return Err(Error::Mode(format!(
                        "installed extended table was tuned as {}, strategy `{}` needs {}",
                        ext.mode,
                        spec.strategy(),
                        wanted
                    )));
                }
                if ext.target_context < spec.target_context() {
                    return Err(config_err(format!(
                        "extended table covers {} positions, spec targets {}",
                        ext.target_context,
                        spec.target_context()
                    )));
                }
            }
            _ => {}
        }
        Ok(Self {
            model,
            spec,
            interpolated,
            ntk,
        })
    }

    pub fn spec(&self) -> &ExtensionSpec {
        &self.spec
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn encode(&self, tokens: &TokenSequence) -> Result<EmbeddingVector> {
        let len = tokens.len();
        let plan = plan_positions(&self.spec, self.model.position_mode(), len)?;
        let scale = self.spec.attention_multiplier(len);
        let positions = match plan {
            PositionPlan::Chunked { .. } => {
                return pcw_encode(self.model, tokens, self.spec.original_context())
            }
            PositionPlan::Absolute { table, rows } => PositionAssignment::Absolute {
                table: match table {
                    TableKind::Original => TableRef::Original,
                    TableKind::Extended => TableRef::Extended,
                    TableKind::Interpolated => TableRef::Custom(
                        self.interpolated
                            .as_ref()
                            .expect("interpolated table prepared for PI"),
                    ),
                },
                rows,
            },
            PositionPlan::Rotary { phases, .. } => PositionAssignment::Rotary {
                phases,
                freqs: self.ntk.as_ref(),
            },
            PositionPlan::SelfExtend { group, window, .. } => PositionAssignment::SelfExtend {
                group,
                window,
                freqs: None,
            },
        };
        let hidden = self.model.forward(tokens, &positions, scale)?;
        pool_and_normalize(&hidden, &vec![true; len])
    }
}

/// One-shot encode; prefer [`PreparedEncoder`] when encoding many inputs.
pub fn encode(model: &Model, tokens: &TokenSequence, spec: &ExtensionSpec) -> Result<EmbeddingVector> {
    PreparedEncoder::new(model, spec.clone())?.encode(tokens)
}
