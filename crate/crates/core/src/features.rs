//! Factored action spaces and their binary indicator encoding.
//!
//! An action is a tuple of `d` discrete feature values. Its indicator is the
//! concatenation of one one-hot block per dimension (the marginal blocks),
//! optionally followed by a one-hot block over the joint value of the first
//! `s` dimensions (the interaction block).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest action space `enumerate_actions` will materialize by default.
pub const DEFAULT_ACTION_CAP: u128 = 1_000_000;

/// Which blocks an indicator carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorMode {
    /// Marginal blocks only.
    Pi,
    /// Marginal blocks plus the first-`s` interaction block.
    Lcpi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureScheme {
    cards: Vec<usize>,
    interaction_width: usize,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl FeatureScheme {
    pub fn new(cards: Vec<usize>, interaction_width: usize) -> Result<Self> {
        if cards.is_empty() {
            return Err(Error::invalid("feature scheme needs at least one dimension"));
        }
        if let Some((l, &m)) = cards.iter().enumerate().find(|(_, &m)| m < 2) {
            return Err(Error::invalid(format!(
                "dimension {l} has cardinality {m}; every dimension needs at least 2 values"
            )));
        }
        if interaction_width == 0 || interaction_width > cards.len() {
            return Err(Error::invalid(format!(
                "interaction width {interaction_width} must lie in [1, {}]",
                cards.len()
            )));
        }
        let mut offsets = Vec::with_capacity(cards.len());
        let mut acc = 0;
        for &m in &cards {
            offsets.push(acc);
            acc += m;
        }
        Ok(Self {
            cards,
            interaction_width,
            offsets,
        })
    }

    /// `d` dimensions with `m` values each.
    pub fn uniform(dims: usize, m: usize, interaction_width: usize) -> Result<Self> {
        Self::new(vec![m; dims], interaction_width)
    }

    pub fn dims(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn interaction_width(&self) -> usize {
        self.interaction_width
    }

    /// Total length of the concatenated marginal blocks.
    pub fn marginal_len(&self) -> usize {
        self.cards.iter().sum()
    }

    /// Number of joint values of the first `s` dimensions.
    pub fn interaction_len(&self) -> usize {
        self.cards[..self.interaction_width].iter().product()
    }

    pub fn indicator_len(&self, mode: IndicatorMode) -> usize {
        match mode {
            IndicatorMode::Pi => self.marginal_len(),
            IndicatorMode::Lcpi => self.marginal_len() + self.interaction_len(),
        }
    }

    /// Offset of dimension `l`'s block inside the marginal part.
    pub fn marginal_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// Size of the full product space, or `None` on overflow.
    pub fn action_count(&self) -> Option<u128> {
        self.cards.iter().try_fold(1u128, |acc, &m| acc.checked_mul(m as u128))
    }

    pub fn validate(&self, features: &ActionFeatures) -> Result<()> {
        if features.values.len() != self.dims() {
            return Err(Error::invalid(format!(
                "action has {} feature values, scheme has {} dimensions",
                features.values.len(),
                self.dims()
            )));
        }
        for (l, (&v, &m)) in features.values.iter().zip(&self.cards).enumerate() {
            if v >= m {
                return Err(Error::invalid(format!("feature {l} has value {v}, cardinality is {m}")));
            }
        }
        Ok(())
    }

    /// Mixed-radix index of the first `s` values, dimension 0 most significant.
    pub fn interaction_index(&self, features: &ActionFeatures) -> usize {
        self.prefix_index(&features.values[..self.interaction_width])
    }

    pub(crate) fn prefix_index(&self, prefix: &[usize]) -> usize {
        prefix.iter().zip(&self.cards).fold(0, |acc, (&v, &m)| acc * m + v)
    }

    /// Row-major index of the whole tuple within the full product space.
    pub fn full_index(&self, features: &ActionFeatures) -> usize {
        self.prefix_index(&features.values)
    }

    /// Positions of the set bits of the indicator, in increasing order.
    pub fn active_positions(&self, features: &ActionFeatures, mode: IndicatorMode) -> Vec<usize> {
        let mut out: Vec<usize> = features
            .values
            .iter()
            .enumerate()
            .map(|(l, &v)| self.offsets[l] + v)
            .collect();
        if mode == IndicatorMode::Lcpi {
            out.push(self.marginal_len() + self.interaction_index(features));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionFeatures {
    pub values: Vec<usize>,
}

impl ActionFeatures {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }
}

impl From<Vec<usize>> for ActionFeatures {
    fn from(values: Vec<usize>) -> Self {
        Self { values }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionIndicator {
    pub bits: Vec<u8>,
}

impl ActionIndicator {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_iterator(self.bits.len(), self.bits.iter().map(|&b| b as f64))
    }
}

pub fn encode(features: &ActionFeatures, scheme: &FeatureScheme, mode: IndicatorMode) -> Result<ActionIndicator> {
    scheme.validate(features)?;
    let mut bits = vec![0u8; scheme.indicator_len(mode)];
    for p in scheme.active_positions(features, mode) {
        bits[p] = 1;
    }
    Ok(ActionIndicator { bits })
}

pub fn enumerate_actions(scheme: &FeatureScheme) -> Result<Vec<ActionFeatures>> {
    enumerate_actions_capped(scheme, DEFAULT_ACTION_CAP)
}

/// All tuples of the product space in lexicographic order.
pub fn enumerate_actions_capped(scheme: &FeatureScheme, cap: u128) -> Result<Vec<ActionFeatures>> {
    let total = scheme.action_count().unwrap_or(u128::MAX);
    if total > cap {
        return Err(Error::Capacity {
            what: "action count",
            requested: total,
            limit: cap,
        });
    }
    let d = scheme.dims();
    let mut out = Vec::with_capacity(total as usize);
    let mut cur = vec![0usize; d];
    loop {
        out.push(ActionFeatures::new(cur.clone()));
        // odometer increment, last dimension fastest
        let mut l = d;
        loop {
            if l == 0 {
                return Ok(out);
            }
            l -= 1;
            cur[l] += 1;
            if cur[l] < scheme.cards[l] {
                break;
            }
            cur[l] = 0;
        }
    }
}

/// A concrete list of actions over a scheme, with their indicators precomputed.
///
/// Synthetic environments use the full product space; semi-synthetic ones use
/// the item catalogue, which may cover only part of it.
#[derive(Debug, Clone)]
pub struct ActionSpace {
    scheme: FeatureScheme,
    actions: Vec<ActionFeatures>,
    lcpi_active: Vec<usize>,
    pi_active: Vec<usize>,
    full_product: bool,
}

impl ActionSpace {
    pub fn full(scheme: FeatureScheme) -> Result<Self> {
        let actions = enumerate_actions(&scheme)?;
        Self::from_actions(scheme, actions)
    }

    pub fn from_actions(scheme: FeatureScheme, actions: Vec<ActionFeatures>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("action space is empty"));
        }
        let mut lcpi_active = Vec::with_capacity(actions.len() * (scheme.dims() + 1));
        let mut pi_active = Vec::with_capacity(actions.len() * scheme.dims());
        for a in &actions {
            scheme.validate(a)?;
            lcpi_active.extend(scheme.active_positions(a, IndicatorMode::Lcpi));
            pi_active.extend(scheme.active_positions(a, IndicatorMode::Pi));
        }
        let full_product = scheme.action_count() == Some(actions.len() as u128)
            && actions.iter().enumerate().all(|(i, a)| scheme.full_index(a) == i);
        Ok(Self {
            scheme,
            actions,
            lcpi_active,
            pi_active,
            full_product,
        })
    }

    pub fn scheme(&self) -> &FeatureScheme {
        &self.scheme
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// True when the actions are exactly the product space in lexicographic order.
    pub fn is_full_product(&self) -> bool {
        self.full_product
    }

    pub fn actions(&self) -> &[ActionFeatures] {
        &self.actions
    }

    pub fn features(&self, action: usize) -> &ActionFeatures {
        &self.actions[action]
    }

    pub fn indicator_len(&self, mode: IndicatorMode) -> usize {
        self.scheme.indicator_len(mode)
    }

    /// Set bit positions of action `a`'s indicator.
    #[inline]
    pub fn active(&self, action: usize, mode: IndicatorMode) -> &[usize] {
        match mode {
            IndicatorMode::Lcpi => {
                let w = self.scheme.dims() + 1;
                &self.lcpi_active[action * w..(action + 1) * w]
            }
            IndicatorMode::Pi => {
                let w = self.scheme.dims();
                &self.pi_active[action * w..(action + 1) * w]
            }
        }
    }

    /// All active positions, `stride` per action, in action order.
    #[inline]
    pub(crate) fn active_table(&self, mode: IndicatorMode) -> (&[usize], usize) {
        match mode {
            IndicatorMode::Lcpi => (&self.lcpi_active, self.scheme.dims() + 1),
            IndicatorMode::Pi => (&self.pi_active, self.scheme.dims()),
        }
    }

    pub fn indicator(&self, action: usize, mode: IndicatorMode) -> DVector<f64> {
        let mut v = DVector::zeros(self.indicator_len(mode));
        for &p in self.active(action, mode) {
            v[p] = 1.0;
        }
        v
    }
}
