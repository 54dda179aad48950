//! Inter-rater reliability for nominal labels.
//!
//! Krippendorff's alpha is computed from the coincidence matrix, which handles
//! any number of raters per unit and arbitrary missing ratings. The statistic is
//! generic over [`Field`], so it can be evaluated exactly with rationals.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Field;

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("no unit has two or more ratings")]
    NoPairableUnits,
    #[error("rater {rater} rated unit {unit} twice")]
    DuplicateRating { unit: String, rater: String },
    #[error("a pairwise design needs at least 2 raters, got {0}")]
    TooFewRaters(usize),
    #[error("rating CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Partial map from (unit, rater) to a nominal label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingMatrix {
    units: Vec<String>,
    raters: Vec<String>,
    values: BTreeMap<(usize, usize), String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub unit_id: String,
    pub rater_id: String,
    pub label: String,
}

fn intern(list: &mut Vec<String>, id: &str) -> usize {
    match list.iter().position(|x| x == id) {
        Some(i) => i,
        None => {
            list.push(id.to_string());
            list.len() - 1
        }
    }
}

impl RatingMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, unit: &str, rater: &str, label: &str) -> Result<(), AgreementError> {
        let u = intern(&mut self.units, unit);
        let r = intern(&mut self.raters, rater);
        if self.values.insert((u, r), label.to_string()).is_some() {
            return Err(AgreementError::DuplicateRating { unit: unit.into(), rater: rater.into() });
        }
        Ok(())
    }

    pub fn from_ratings<I>(ratings: I) -> Result<Self, AgreementError>
    where
        I: IntoIterator<Item = Rating>,
    {
        let mut m = Self::new();
        for r in ratings {
            m.insert(&r.unit_id, &r.rater_id, &r.label)?;
        }
        Ok(m)
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn raters(&self) -> &[String] {
        &self.raters
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Labels given to unit `u` (by index), in rater order.
    pub fn unit_values(&self, u: usize) -> Vec<&str> {
        self.values.range((u, 0)..(u + 1, 0)).map(|(_, v)| v.as_str()).collect()
    }

    pub fn ratings(&self) -> impl Iterator<Item = Rating> + '_ {
        self.values.iter().map(|(&(u, r), label)| Rating {
            unit_id: self.units[u].clone(),
            rater_id: self.raters[r].clone(),
            label: label.clone(),
        })
    }

    /// Reads CSV with header `unit_id,rater_id,label`.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, AgreementError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let ratings = reader.deserialize::<Rating>().collect::<Result<Vec<_>, _>>()?;
        Self::from_ratings(ratings)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), AgreementError> {
        let mut writer = csv::Writer::from_writer(out);
        for r in self.ratings() {
            writer.serialize(r)?;
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = "T: Serialize"))]
pub struct AgreementReport<T> {
    /// `None` when expected disagreement is zero (alpha undefined).
    pub alpha: Option<T>,
    pub alpha_undefined: bool,
    pub percent_agreement: T,
    /// All units, including those with a single rating.
    pub units: usize,
    pub pairable_units: usize,
    pub unanimous_units: usize,
    /// Number of ratings inside pairable units.
    pub pairable_values: u64,
    pub label_marginals: BTreeMap<String, u64>,
    pub observed_disagreement: T,
    pub expected_disagreement: T,
}

impl<T: Field> AgreementReport<T> {
    /// Alpha rounded to three decimals, or `"undefined"`.
    pub fn alpha_display(&self) -> String {
        self.alpha.as_ref().map_or_else(|| "undefined".to_string(), |a| format!("{:.3}", a.approx_f64()))
    }

    pub fn to_f64(&self) -> AgreementReport<f64> {
        AgreementReport {
            alpha: self.alpha.as_ref().map(Field::approx_f64),
            alpha_undefined: self.alpha_undefined,
            percent_agreement: self.percent_agreement.approx_f64(),
            units: self.units,
            pairable_units: self.pairable_units,
            unanimous_units: self.unanimous_units,
            pairable_values: self.pairable_values,
            label_marginals: self.label_marginals.clone(),
            observed_disagreement: self.observed_disagreement.approx_f64(),
            expected_disagreement: self.expected_disagreement.approx_f64(),
        }
    }
}

/// Fraction of pairable units whose ratings are all identical.
pub fn percent_agreement<T: Field>(matrix: &RatingMatrix) -> Result<T, AgreementError> {
    let (pairable, unanimous) = unit_tallies(matrix);
    if pairable == 0 {
        return Err(AgreementError::NoPairableUnits);
    }
    Ok(T::from_count(unanimous as u64) / T::from_count(pairable as u64))
}

fn unit_tallies(matrix: &RatingMatrix) -> (usize, usize) {
    let mut pairable = 0;
    let mut unanimous = 0;
    for u in 0..matrix.units.len() {
        let vals = matrix.unit_values(u);
        if vals.len() >= 2 {
            pairable += 1;
            if vals.iter().all(|v| *v == vals[0]) {
                unanimous += 1;
            }
        }
    }
    (pairable, unanimous)
}

/// Krippendorff's alpha with the nominal difference function.
pub fn krippendorff_alpha<T: Field>(matrix: &RatingMatrix) -> Result<AgreementReport<T>, AgreementError> {
    let labels: Vec<String> = matrix.values.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let k = labels.len();
    let idx = |v: &str| labels.binary_search_by(|l| l.as_str().cmp(v)).expect("label interned");

    // o[c][k]: coincidences; a unit with m ratings adds 1/(m-1) per ordered pair.
    let mut coincidences = vec![vec![T::zero(); k]; k];
    let mut pairable_values = 0u64;
    let mut marginals: BTreeMap<String, u64> = BTreeMap::new();
    for u in 0..matrix.units.len() {
        let vals = matrix.unit_values(u);
        let m = vals.len();
        if m < 2 {
            continue;
        }
        pairable_values += m as u64;
        let mut per_label = vec![0u64; k];
        for v in &vals {
            per_label[idx(v)] += 1;
            *marginals.entry(v.to_string()).or_insert(0) += 1;
        }
        let weight = T::one() / T::from_count(m as u64 - 1);
        for c in 0..k {
            if per_label[c] == 0 {
                continue;
            }
            for d in 0..k {
                let pairs = if c == d { per_label[c] * (per_label[c] - 1) } else { per_label[c] * per_label[d] };
                if pairs > 0 {
                    coincidences[c][d] = coincidences[c][d].clone() + T::from_count(pairs) * weight.clone();
                }
            }
        }
    }
    if pairable_values == 0 {
        return Err(AgreementError::NoPairableUnits);
    }

    let n: T = coincidences.iter().flatten().fold(T::zero(), |a, b| a + b.clone());
    let n_c: Vec<T> = coincidences.iter().map(|row| row.iter().fold(T::zero(), |a, b| a + b.clone())).collect();
    let mut observed = T::zero();
    let mut expected = T::zero();
    for c in 0..k {
        for d in 0..k {
            if c != d {
                observed = observed + coincidences[c][d].clone();
                expected = expected + n_c[c].clone() * n_c[d].clone();
            }
        }
    }
    let d_o = observed / n.clone();
    let d_e = expected / (n.clone() * (n - T::one()));
    let alpha = if d_e == T::zero() { None } else { Some(T::one() - d_o.clone() / d_e.clone()) };

    let (pairable_units, unanimous_units) = unit_tallies(matrix);
    Ok(AgreementReport {
        alpha_undefined: alpha.is_none(),
        alpha,
        percent_agreement: T::from_count(unanimous_units as u64) / T::from_count(pairable_units as u64),
        units: matrix.units.len(),
        pairable_units,
        unanimous_units,
        pairable_values,
        label_marginals: marginals,
        observed_disagreement: d_o,
        expected_disagreement: d_e,
    })
}

/// One unit of a pairwise design, rated by exactly two raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignUnit {
    pub unit_index: usize,
    pub rater_a: String,
    pub rater_b: String,
}

/// Every unordered pair of raters shares `units_per_pair` units; each unit has
/// exactly two raters. Yields `C(n,2) * units_per_pair` units.
pub fn pairwise_design<S: AsRef<str>>(
    raters: &[S],
    units_per_pair: usize,
) -> Result<Vec<DesignUnit>, AgreementError> {
    let n = raters.len();
    if n < 2 {
        return Err(AgreementError::TooFewRaters(n));
    }
    let mut units = Vec::with_capacity(n * (n - 1) / 2 * units_per_pair);
    for _ in 0..units_per_pair {
        for i in 0..n {
            for j in i + 1..n {
                units.push(DesignUnit {
                    unit_index: units.len(),
                    rater_a: raters[i].as_ref().to_string(),
                    rater_b: raters[j].as_ref().to_string(),
                });
            }
        }
    }
    Ok(units)
}

/// Rater ids `R1..Rn`.
pub fn numbered_raters(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("R{i}")).collect()
}
