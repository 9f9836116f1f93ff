use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::{format_float, RealDataPaths};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const FIXTURE_USERS: usize = 20;
pub const FIXTURE_ITEMS: usize = 30;
const USER_DIM: usize = 3;
const CARDS: [usize; 2] = [5, 6];

/// Writes a miniature users/items/rewards dataset into `dir`.
///
/// Items cover every combination of two features with 5 and 6 values. The
/// reward is a positive watch-ratio-like quantity with a heavy right tail, so
/// quantile clipping has something to clip.
pub fn write_fixture(dir: impl AsRef<Path>, seed: u64) -> Result<RealDataPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = RealDataPaths::in_dir(dir);
    let mut rng = stream_rng(seed, Stream::Fixture);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let mut draws = |n: usize| -> Vec<f64> { (0..n).map(|_| normal()).collect() };

    let users: Vec<Vec<f64>> = (0..FIXTURE_USERS).map(|_| draws(USER_DIM)).collect();
    let value_weights: Vec<Vec<Vec<f64>>> = CARDS
        .iter()
        .map(|&m| (0..m).map(|_| draws(USER_DIM)).collect())
        .collect();
    let value_bias: Vec<Vec<f64>> = CARDS
        .iter()
        .map(|&m| draws(m).into_iter().map(|v| 0.5 * v).collect())
        .collect();
    let noise = draws(FIXTURE_USERS * FIXTURE_ITEMS);

    let mut items: Vec<[usize; 2]> = (0..CARDS[0]).flat_map(|a| (0..CARDS[1]).map(move |b| [a, b])).collect();
    items.shuffle(&mut stream_rng(seed, Stream::Partition));

    let mut text = String::from("user_id,");
    text += &(0..USER_DIM).map(|k| format!("x_{k}")).collect::<Vec<_>>().join(",");
    text.push('\n');
    for (u, x) in users.iter().enumerate() {
        let cells: Vec<String> = x.iter().map(|&v| format_float(v)).collect();
        writeln!(text, "u{u},{}", cells.join(",")).expect("write to string");
    }
    write(&paths.users, &text)?;

    let mut text = String::from("item_id,f_0,f_1\n");
    for (i, f) in items.iter().enumerate() {
        writeln!(text, "i{i},{},{}", f[0], f[1]).expect("write to string");
    }
    write(&paths.items, &text)?;

    let mut text = String::from("user_id,item_id,reward\n");
    for (u, x) in users.iter().enumerate() {
        for (i, f) in items.iter().enumerate() {
            let score: f64 = (0..2)
                .map(|l| {
                    value_bias[l][f[l]] + value_weights[l][f[l]].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() / 2.0
                })
                .sum();
            let reward = (0.5 * score + 0.3 * noise[u * FIXTURE_ITEMS + i]).exp();
            writeln!(text, "u{u},i{i},{}", format_float(reward)).expect("write to string");
        }
    }
    write(&paths.rewards, &text)?;
    Ok(paths)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
