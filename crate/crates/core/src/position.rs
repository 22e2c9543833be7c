//! Context-window extension strategies that work by manipulating positions.
//!
//! Absolute-position models can reuse original rows (grouped or recurrent
//! positions), read from a linearly interpolated table, or read from a table
//! that was extended and tuned. Rotary models can group or divide their
//! phases, rescale their frequencies (NTK-aware interpolation) or remap
//! relative distances beyond a neighbour window (SelfExtend).
//!
//! [`plan_positions`] is the single place that turns an [`ExtensionSpec`]
//! and an input length into concrete positions; encoding, `inspect` and the
//! range-safety checks all go through it.

use std::fmt;
use std::str::FromStr;

use serde::{Serialize, Serializer};

use crate::chunking::{plan_chunks, ChunkPlan};
use crate::encoder::{PositionEmbeddingMatrix, PositionMode, RoPEFrequencies};
use crate::error::{config_err, Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    None,
    Pcw,
    Gp,
    Rp,
    Pi,
    Ntk,
    Se,
    TunedPi,
    TunedRp,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::None,
        Strategy::Pcw,
        Strategy::Gp,
        Strategy::Rp,
        Strategy::Pi,
        Strategy::Ntk,
        Strategy::Se,
        Strategy::TunedPi,
        Strategy::TunedRp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Pcw => "pcw",
            Strategy::Gp => "gp",
            Strategy::Rp => "rp",
            Strategy::Pi => "pi",
            Strategy::Ntk => "ntk",
            Strategy::Se => "se",
            Strategy::TunedPi => "tuned_pi",
            Strategy::TunedRp => "tuned_rp",
        }
    }

    /// Whether the strategy is defined for the given position mode.
    pub fn supports(self, mode: PositionMode) -> bool {
        match self {
            Strategy::None | Strategy::Pcw | Strategy::Gp | Strategy::Rp | Strategy::Pi => true,
            Strategy::Ntk | Strategy::Se => mode == PositionMode::Rotary,
            Strategy::TunedPi | Strategy::TunedRp => mode == PositionMode::Absolute,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| config_err(format!("unknown strategy `{s}`")))
    }
}

/// One extension strategy with its resolved parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionSpec {
    strategy: Strategy,
    original_context: usize,
    target_context: usize,
    ntk_lambda: Option<f64>,
    se_group: Option<usize>,
    se_window: Option<usize>,
    attention_scaling: bool,
    notes: Vec<String>,
}

impl ExtensionSpec {
    /// No extension: the target context equals the original one.
    pub fn none(original_context: usize) -> Result<Self> {
        Self::new(Strategy::None, original_context, original_context)
    }

    /// Builds a spec and fills strategy parameters from the defaults table
    /// (NTK `λ`, SelfExtend `g`/`w`) when the strategy needs them.
    pub fn new(strategy: Strategy, original_context: usize, target_context: usize) -> Result<Self> {
        if original_context == 0 {
            return Err(config_err("original context must be at least 1"));
        }
        if target_context < original_context {
            return Err(config_err(format!(
                "target context {target_context} is shorter than the original context {original_context}"
            )));
        }
        if strategy == Strategy::None && target_context != original_context {
            return Err(config_err(
                "strategy `none` requires target_context == original_context",
            ));
        }
        let mut spec = Self {
            strategy,
            original_context,
            target_context,
            ntk_lambda: None,
            se_group: None,
            se_window: None,
            attention_scaling: true,
            notes: Vec::new(),
        };
        let s = spec.scale();
        match strategy {
            Strategy::Ntk => {
                let lambda = resolve_ntk_lambda(s);
                if !ntk_lambda_is_tabulated(s) {
                    spec.notes.push(format!(
                        "ntk lambda for s={s} not tabulated; fell back to s+1 = {lambda}"
                    ));
                }
                spec.ntk_lambda = Some(lambda);
            }
            Strategy::Se => {
                let (g, w) = resolve_se_params(original_context, target_context)?;
                if !se_params_are_tabulated(original_context, target_context) {
                    spec.notes.push(format!(
                        "self-extend parameters for {original_context}->{target_context} not tabulated; \
                         derived g={g}, w={w}"
                    ));
                }
                spec.se_group = Some(g);
                spec.se_window = Some(w);
            }
            _ => {}
        }
        Ok(spec)
    }

    pub fn with_ntk_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(config_err(format!("ntk lambda must be > 0, got {lambda}")));
        }
        let s = self.scale() as f64;
        if lambda <= s {
            log::warn!("ntk lambda {lambda} is not greater than the scaling factor {s}");
            self.notes
                .push(format!("ntk lambda {lambda} <= scaling factor {s}"));
        }
        self.ntk_lambda = Some(lambda);
        Ok(self)
    }

    pub fn with_self_extend(mut self, group: usize, window: usize) -> Result<Self> {
        if group == 0 {
            return Err(config_err("self-extend group size must be >= 1"));
        }
        if !se_feasible(self.original_context, self.target_context, group, window) {
            return Err(config_err(format!(
                "self-extend (g={group}, w={window}) maps distance {} to {}, beyond the trained range {}",
                self.target_context - 1,
                self_extend_relpos(self.target_context as i64 - 1, 0, group, window),
                self.original_context - 1
            )));
        }
        self.se_group = Some(group);
        self.se_window = Some(window);
        Ok(self)
    }

    pub fn with_attention_scaling(mut self, enabled: bool) -> Self {
        self.attention_scaling = enabled;
        self
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn original_context(&self) -> usize {
        self.original_context
    }

    pub fn target_context(&self) -> usize {
        self.target_context
    }

    /// `s = ⌈L_t / L_o⌉`, always recomputed.
    pub fn scale(&self) -> usize {
        self.target_context.div_ceil(self.original_context).max(1)
    }

    pub fn ntk_lambda(&self) -> Option<f64> {
        self.ntk_lambda
    }

    pub fn self_extend(&self) -> Option<(usize, usize)> {
        self.se_group.zip(self.se_window)
    }

    pub fn attention_scaling(&self) -> bool {
        self.attention_scaling
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Logit multiplier for an input of `len` tokens.
    pub fn attention_multiplier(&self, len: usize) -> f64 {
        if self.attention_scaling {
            attention_scale(len, self.original_context)
        } else {
            1.0
        }
    }
}

impl Serialize for ExtensionSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = serializer.serialize_struct("ExtensionSpec", 9)?;
        st.serialize_field("strategy", &self.strategy)?;
        st.serialize_field("original_context", &self.original_context)?;
        st.serialize_field("target_context", &self.target_context)?;
        st.serialize_field("scale", &self.scale())?;
        st.serialize_field("ntk_lambda", &self.ntk_lambda)?;
        st.serialize_field("se_group", &self.se_group)?;
        st.serialize_field("se_window", &self.se_window)?;
        st.serialize_field("attention_scaling", &self.attention_scaling)?;
        st.serialize_field("notes", &self.notes)?;
        st.end()
    }
}

/// `⌊pid / s⌋`
pub fn grouped_positions(pid: usize, s: usize) -> usize {
    pid / s.max(1)
}

/// `pid mod L_o`
pub fn recurrent_positions(pid: usize, original_context: usize) -> usize {
    pid % original_context.max(1)
}

/// Extends `E_o` (`L_o` rows) to `L_o·s` rows.
///
/// Row `i·s` is a bitwise copy of `E_o[i]` and is frozen. Row `i·s + k`
/// (`0 < k < s`) is `(1 − k/s)·E_o[i] + (k/s)·E_o[i+1]`. Rows past the last
/// anchor `(L_o − 1)·s` have no right neighbour and repeat the last anchor.
pub fn build_interpolated_matrix(original: &PositionEmbeddingMatrix, s: usize) -> PositionEmbeddingMatrix {
    let s = s.max(1);
    let l_o = original.len();
    let d = original.dim();
    let mut rows = Matrix::zeros(l_o * s, d);
    let mut frozen = vec![false; l_o * s];
    for i in 0..l_o {
        rows.row_mut(i * s).copy_from_slice(original.row(i));
        frozen[i * s] = true;
        for k in 1..s {
            let t = k as f64 / s as f64;
            let dst = rows.row_mut(i * s + k);
            if i + 1 < l_o {
                let (left, right) = (original.row(i), original.row(i + 1));
                for ((o, a), b) in dst.iter_mut().zip(left).zip(right) {
                    *o = (1.0 - t) * a + t * b;
                }
            } else {
                dst.copy_from_slice(original.row(i));
            }
        }
    }
    PositionEmbeddingMatrix::with_flags(rows, frozen).expect("flags sized to rows")
}

/// Row of the interpolated table read by token `token_index`.
///
/// Inputs no longer than `L_o` use the anchor rows `token_index·s`, which
/// reproduces the unextended model exactly; longer inputs read `E_t`
/// densely.
pub fn pi_position_map(token_index: usize, input_len: usize, spec: &ExtensionSpec) -> Result<usize> {
    if token_index >= spec.target_context() {
        return Err(Error::Position(format!(
            "token index {token_index} outside target context {}",
            spec.target_context()
        )));
    }
    if input_len <= spec.original_context() {
        Ok(token_index * spec.scale())
    } else {
        Ok(token_index)
    }
}

/// `θ'_j = (base·λ)^(−2j/d)`
pub fn ntk_frequencies(d: usize, base: f64, lambda: f64) -> Result<RoPEFrequencies> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(config_err(format!("ntk lambda must be > 0, got {lambda}")));
    }
    RoPEFrequencies::new(d, base * lambda)
}

/// NTK multiplier for a scaling factor: tabulated for `s ∈ {2, 4, 8}`,
/// `s + 1` otherwise.
pub fn resolve_ntk_lambda(s: usize) -> f64 {
    match s {
        2 => 3.0,
        4 => 5.0,
        8 => 10.0,
        other => other as f64 + 1.0,
    }
}

pub fn ntk_lambda_is_tabulated(s: usize) -> bool {
    matches!(s, 2 | 4 | 8)
}

/// SelfExtend relative position of query `i` to key `j`.
///
/// Distances within the neighbour window `w` are kept; beyond it they are
/// floor-grouped: `sign(Δ)·(w + ⌊(|Δ| − w)/g⌋)` with `Δ = i − j`.
pub fn self_extend_relpos(i: i64, j: i64, group: usize, window: usize) -> i64 {
    let delta = i - j;
    let dist = delta.unsigned_abs() as usize;
    if dist <= window {
        return delta;
    }
    let remapped = (window + (dist - window) / group.max(1)) as i64;
    if delta < 0 {
        -remapped
    } else {
        remapped
    }
}

/// True when the largest remapped distance of an `L_t`-token input stays
/// within `L_o − 1`.
pub fn se_feasible(original_context: usize, target_context: usize, group: usize, window: usize) -> bool {
    if group == 0 || original_context == 0 {
        return false;
    }
    let max_dist = target_context.saturating_sub(1) as i64;
    self_extend_relpos(max_dist, 0, group, window) <= original_context as i64 - 1
}

const SE_TABLE: [((usize, usize), (usize, usize)); 6] = [
    ((512, 1024), (3, 256)),
    ((512, 2048), (5, 128)),
    ((512, 4096), (9, 64)),
    ((4096, 8192), (3, 2048)),
    ((4096, 16384), (5, 1024)),
    ((4096, 32768), (9, 512)),
];

/// The `(L_o, L_t)` pairs with tabulated defaults.
pub fn tabulated_extensions() -> Vec<(usize, usize)> {
    SE_TABLE.iter().map(|(k, _)| *k).collect()
}

fn se_params_are_tabulated(original_context: usize, target_context: usize) -> bool {
    SE_TABLE
        .iter()
        .any(|(k, _)| *k == (original_context, target_context))
}

/// SelfExtend `(g, w)`: tabulated where available, otherwise `w = L_o/8`
/// with the smallest feasible `g`.
pub fn resolve_se_params(original_context: usize, target_context: usize) -> Result<(usize, usize)> {
    if let Some((_, gw)) = SE_TABLE
        .iter()
        .find(|(k, _)| *k == (original_context, target_context))
    {
        return Ok(*gw);
    }
    if original_context == 0 {
        return Err(config_err("original context must be at least 1"));
    }
    let window = original_context / 8;
    (1..=target_context.max(1))
        .find(|&g| se_feasible(original_context, target_context, g, window))
        .map(|g| (g, window))
        .ok_or_else(|| {
            config_err(format!(
                "no feasible self-extend group size for {original_context} -> {target_context}"
            ))
        })
}

/// `max(1, ln n / ln L_o)`, multiplied onto pre-softmax logits.
pub fn attention_scale(n: usize, original_context: usize) -> f64 {
    if n <= original_context || original_context < 2 {
        return 1.0;
    }
    ((n as f64).ln() / (original_context as f64).ln()).max(1.0)
}

/// Which absolute table a plan reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// `E_o`, `L_o` rows.
    Original,
    /// Interpolated `E_t` built from `E_o`, `L_o·s` rows.
    Interpolated,
    /// The tuned table installed on the model.
    Extended,
}

/// Concrete positions for one input.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionPlan {
    Absolute { table: TableKind, rows: Vec<usize> },
    Rotary { phases: Vec<f64>, ntk_lambda: Option<f64> },
    SelfExtend { group: usize, window: usize, len: usize },
    Chunked { chunks: ChunkPlan },
}

/// Positions the encoder will use for an input of `len` tokens.
pub fn plan_positions(spec: &ExtensionSpec, mode: PositionMode, len: usize) -> Result<PositionPlan> {
    if len == 0 {
        return Err(Error::EmptyInput("input has no tokens".into()));
    }
    if !spec.strategy().supports(mode) {
        return Err(Error::Mode(format!(
            "strategy `{}` is not defined for {mode} position mode",
            spec.strategy()
        )));
    }
    if len > spec.target_context() {
        return Err(Error::Length {
            len,
            limit: spec.target_context(),
        });
    }
    let l_o = spec.original_context();
    let s = spec.scale();
    let plan = match (spec.strategy(), mode) {
        (Strategy::Pcw, _) => PositionPlan::Chunked {
            chunks: plan_chunks(len, l_o),
        },
        (Strategy::None, PositionMode::Absolute) => PositionPlan::Absolute {
            table: TableKind::Original,
            rows: (0..len).collect(),
        },
        (Strategy::Gp, PositionMode::Absolute) => PositionPlan::Absolute {
            table: TableKind::Original,
            rows: (0..len).map(|p| grouped_positions(p, s)).collect(),
        },
        (Strategy::Rp, PositionMode::Absolute) => PositionPlan::Absolute {
            table: TableKind::Original,
            rows: (0..len).map(|p| recurrent_positions(p, l_o)).collect(),
        },
        (Strategy::Pi, PositionMode::Absolute) => PositionPlan::Absolute {
            table: TableKind::Interpolated,
            rows: (0..len)
                .map(|p| pi_position_map(p, len, spec))
                .collect::<Result<_>>()?,
        },
        (Strategy::TunedPi, PositionMode::Absolute) => PositionPlan::Absolute {
            table: TableKind::Extended,
            rows: (0..len)
                .map(|p| pi_position_map(p, len, spec))
                .collect::<Result<_>>()?,
        },
        (Strategy::TunedRp, PositionMode::Absolute) => PositionPlan::Absolute {
            table: TableKind::Extended,
            rows: (0..len).collect(),
        },
        (Strategy::None, PositionMode::Rotary) => PositionPlan::Rotary {
            phases: (0..len).map(|p| p as f64).collect(),
            ntk_lambda: None,
        },
        (Strategy::Gp, PositionMode::Rotary) => PositionPlan::Rotary {
            phases: (0..len).map(|p| grouped_positions(p, s) as f64).collect(),
            ntk_lambda: None,
        },
        (Strategy::Rp, PositionMode::Rotary) => PositionPlan::Rotary {
            phases: (0..len).map(|p| recurrent_positions(p, l_o) as f64).collect(),
            ntk_lambda: None,
        },
        (Strategy::Pi, PositionMode::Rotary) => PositionPlan::Rotary {
            phases: (0..len)
                .map(|p| if len <= l_o { p as f64 } else { p as f64 / s as f64 })
                .collect(),
            ntk_lambda: None,
        },
        (Strategy::Ntk, PositionMode::Rotary) => PositionPlan::Rotary {
            phases: (0..len).map(|p| p as f64).collect(),
            ntk_lambda: Some(
                spec.ntk_lambda()
                    .unwrap_or_else(|| resolve_ntk_lambda(s)),
            ),
        },
        (Strategy::Se, PositionMode::Rotary) => {
            let (group, window) = match spec.self_extend() {
                Some(gw) => gw,
                None => resolve_se_params(l_o, spec.target_context())?,
            };
            PositionPlan::SelfExtend { group, window, len }
        }
        (st, m) => {
            return Err(Error::Mode(format!(
                "strategy `{st}` is not defined for {m} position mode"
            )))
        }
    };
    Ok(plan)
}
