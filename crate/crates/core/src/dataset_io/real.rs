use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{csv_error, parse_cell, reader};
use crate::error::{Error, Result};
use crate::features::{ActionFeatures, FeatureScheme};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealDataPaths {
    pub users: PathBuf,
    pub items: PathBuf,
    pub rewards: PathBuf,
}

impl RealDataPaths {
    /// `users.csv`, `items.csv` and `rewards.csv` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            users: dir.join("users.csv"),
            items: dir.join("items.csv"),
            rewards: dir.join("rewards.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealLoadOptions {
    /// Rewards are clipped at this quantile and divided by the clip value.
    pub clip_quantile: f64,
    pub interaction_width: usize,
    /// Per-dimension cardinalities; inferred from the largest index when absent.
    pub cards: Option<Vec<usize>>,
}

impl Default for RealLoadOptions {
    fn default() -> Self {
        Self {
            clip_quantile: 0.99,
            interaction_width: 2,
            cards: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDatasetSpec {
    pub user_ids: Vec<String>,
    pub user_features: Vec<Vec<f64>>,
    pub item_ids: Vec<String>,
    pub item_features: Vec<ActionFeatures>,
    /// Normalized rewards, one row per user and one column per item.
    pub rewards: DMatrix<f64>,
    pub scheme: FeatureScheme,
    pub clip_value: f64,
}

fn check_header(path: &Path, got: &csv::StringRecord, id: &str, prefix: Option<&str>, fixed: &[&str]) -> Result<usize> {
    let names: Vec<&str> = got.iter().collect();
    if names.first() != Some(&id) {
        return Err(Error::parse(path, 1, format!("first column must be `{id}`")));
    }
    match prefix {
        Some(p) => {
            for (k, name) in names[1..].iter().enumerate() {
                if *name != format!("{p}{k}") {
                    return Err(Error::parse(
                        path,
                        1,
                        format!("column {} is `{name}`, expected `{p}{k}`", k + 1),
                    ));
                }
            }
            if names.len() < 2 {
                return Err(Error::parse(path, 1, format!("need at least one `{p}` column")));
            }
            Ok(names.len() - 1)
        }
        None => {
            if names[1..] != *fixed {
                return Err(Error::parse(
                    path,
                    1,
                    format!("expected columns `{id},{}`", fixed.join(",")),
                ));
            }
            Ok(fixed.len())
        }
    }
}

type Table<T> = (Vec<String>, Vec<T>, Vec<usize>);

fn read_table<T: std::str::FromStr>(path: &Path, id: &str, prefix: &str) -> Result<Table<Vec<T>>> {
    let mut r = reader(path)?;
    let width = check_header(
        path,
        r.headers().map_err(|e| csv_error(path, e))?,
        id,
        Some(prefix),
        &[],
    )?;
    let (mut ids, mut values, mut lines) = (Vec::new(), Vec::new(), Vec::new());
    let mut seen = HashMap::new();
    for record in r.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let key = record[0].to_string();
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate {id} `{key}` (first on line {first})"),
            ));
        }
        let row = (0..width)
            .map(|k| parse_cell(path, line, &format!("{prefix}{k}"), &record[k + 1]))
            .collect::<Result<Vec<T>>>()?;
        ids.push(key);
        values.push(row);
        lines.push(line);
    }
    if ids.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    Ok((ids, values, lines))
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn load_real(paths: &RealDataPaths, options: &RealLoadOptions) -> Result<RealDatasetSpec> {
    if !(options.clip_quantile > 0.0 && options.clip_quantile <= 1.0) {
        return Err(Error::config(format!(
            "clip_quantile {} must lie in (0, 1]",
            options.clip_quantile
        )));
    }
    let (user_ids, user_features, user_lines) = read_table::<f64>(&paths.users, "user_id", "x_")?;
    for (x, &line) in user_features.iter().zip(&user_lines) {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(&paths.users, line, "non-finite user feature"));
        }
    }
    let (item_ids, raw_items, item_lines) = read_table::<usize>(&paths.items, "item_id", "f_")?;
    let d = raw_items[0].len();
    let cards = match &options.cards {
        Some(c) => {
            if c.len() != d {
                return Err(Error::config(format!(
                    "{} cardinalities given for {d} item feature columns",
                    c.len()
                )));
            }
            c.clone()
        }
        None => (0..d)
            .map(|l| raw_items.iter().map(|f| f[l] + 1).max().unwrap_or(0).max(2))
            .collect(),
    };
    for (f, &line) in raw_items.iter().zip(&item_lines) {
        if let Some((l, &v)) = f.iter().enumerate().find(|(l, &v)| v >= cards[*l]) {
            return Err(Error::parse(
                &paths.items,
                line,
                format!("feature f_{l} = {v} is outside cardinality {}", cards[l]),
            ));
        }
    }
    let scheme = FeatureScheme::new(cards, options.interaction_width)?;
    let item_features: Vec<ActionFeatures> = raw_items.into_iter().map(ActionFeatures::new).collect();

    let user_index: HashMap<&str, usize> = user_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let item_index: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
    let mut rewards = DMatrix::from_element(user_ids.len(), item_ids.len(), f64::NAN);
    let rpath = &paths.rewards;
    let mut r = reader(rpath)?;
    check_header(
        rpath,
        r.headers().map_err(|e| csv_error(rpath, e))?,
        "user_id",
        None,
        &["item_id", "reward"],
    )?;
    for record in r.records() {
        let record = record.map_err(|e| csv_error(rpath, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let u = *user_index
            .get(&record[0])
            .ok_or_else(|| Error::parse(rpath, line, format!("unknown user_id `{}`", &record[0])))?;
        let i = *item_index
            .get(&record[1])
            .ok_or_else(|| Error::parse(rpath, line, format!("unknown item_id `{}`", &record[1])))?;
        let v: f64 = parse_cell(rpath, line, "reward", &record[2])?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::parse(rpath, line, format!("reward {v} must be finite and >= 0")));
        }
        if !rewards[(u, i)].is_nan() {
            return Err(Error::parse(rpath, line, "duplicate (user_id, item_id) pair"));
        }
        rewards[(u, i)] = v;
    }
    if let Some(k) = rewards.iter().position(|v| v.is_nan()) {
        let (u, i) = (k % user_ids.len(), k / user_ids.len());
        return Err(Error::parse(
            rpath,
            0,
            format!(
                "no reward for user `{}` and item `{}`; the matrix must be fully observed",
                user_ids[u], item_ids[i]
            ),
        ));
    }
    let mut sorted: Vec<f64> = rewards.iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let clip_value = quantile(&sorted, options.clip_quantile);
    if clip_value <= 0.0 {
        return Err(Error::config("clipped rewards are all zero; nothing to normalize"));
    }
    rewards.apply(|v| *v = v.min(clip_value) / clip_value);
    Ok(RealDatasetSpec {
        user_ids,
        user_features,
        item_ids,
        item_features,
        rewards,
        scheme,
        clip_value,
    })
}
