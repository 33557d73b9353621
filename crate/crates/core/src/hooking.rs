//! Moment-based sequence matching: summarize each HR series as a 4-tuple
//! of population moments and pair every library sequence with its nearest
//! pool sequence under Euclidean distance over the tuples.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DatasetStage, VitalsSeries};

#[derive(Debug, Error, PartialEq)]
pub enum HookError {
    #[error("cannot compute moments of an empty series")]
    EmptySeries,
    #[error("library and pool must both be non-empty")]
    EmptyInput,
    #[error("pool entry {key} has no linked text sample")]
    BrokenKeyLink { key: String },
    #[error("pairing file line {line}: {message}")]
    ParseError { line: usize, message: String },
}

/// The 4-tuple [mean, population variance, skewness, kurtosis].
///
/// Kurtosis is the Pearson (non-excess) form `m4 / sigma^4`. A
/// zero-variance series has skewness and kurtosis 0 by convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub mu: f64,
    pub var: f64,
    pub skew: f64,
    pub kurt: f64,
}

impl MomentVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.mu, self.var, self.skew, self.kurt]
    }
}

/// Population moments (divide by n) of a non-empty series.
pub fn moments(series: &[f64]) -> Result<MomentVector, HookError> {
    if series.is_empty() {
        return Err(HookError::EmptySeries);
    }
    let n = series.len() as f64;
    let mu = series.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &v in series {
        let d = v - mu;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, kurt) = if m2 == 0.0 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    };
    Ok(MomentVector { mu, var: m2, skew, kurt })
}

/// Euclidean distance between two moment 4-tuples.
pub fn euclid(a: &MomentVector, b: &MomentVector) -> f64 {
    a.as_array()
        .iter()
        .zip(b.as_array().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Which side the argmin runs over. The default searches the pool for each
/// library entry, producing one pair per library entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HookDirection {
    #[default]
    ForEachLibrary,
    ForEachPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HookPair {
    pub library_index: usize,
    pub pool_index: usize,
    pub distance: f64,
}

/// The complete pairing plus the dataset tags it connects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookPairing {
    pub pairs: Vec<HookPair>,
    pub library_tag: DatasetStage,
    pub pool_tag: DatasetStage,
    pub direction: HookDirection,
}

/// Pairs each library entry with the nearest pool entry (ties broken by
/// smallest pool index). Pool entries may be reused.
pub fn hook(
    library: &[VitalsSeries],
    pool: &[VitalsSeries],
) -> Result<HookPairing, HookError> {
    hook_directed(library, pool, HookDirection::ForEachLibrary)
}

pub fn hook_directed(
    library: &[VitalsSeries],
    pool: &[VitalsSeries],
    direction: HookDirection,
) -> Result<HookPairing, HookError> {
    if library.is_empty() || pool.is_empty() {
        return Err(HookError::EmptyInput);
    }
    let lib_moments: Vec<MomentVector> =
        library.iter().map(|s| moments(&s.values)).collect::<Result<_, _>>()?;
    let pool_moments: Vec<MomentVector> =
        pool.iter().map(|s| moments(&s.values)).collect::<Result<_, _>>()?;

    let pairs = match direction {
        HookDirection::ForEachLibrary => lib_moments
            .iter()
            .enumerate()
            .map(|(i, lm)| {
                let (j, d) = argmin_distance(lm, &pool_moments);
                HookPair { library_index: i, pool_index: j, distance: d }
            })
            .collect(),
        HookDirection::ForEachPool => pool_moments
            .iter()
            .enumerate()
            .map(|(j, pm)| {
                let (i, d) = argmin_distance(pm, &lib_moments);
                HookPair { library_index: i, pool_index: j, distance: d }
            })
            .collect(),
    };
    Ok(HookPairing {
        pairs,
        library_tag: DatasetStage::Vitals3,
        pool_tag: DatasetStage::Vitals1,
        direction,
    })
}

fn argmin_distance(from: &MomentVector, candidates: &[MomentVector]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (j, c) in candidates.iter().enumerate() {
        let d = euclid(from, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// A pool vitals entry with the incident key linking it back to Text1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedSeries {
    pub key: String,
    pub series: VitalsSeries,
}

/// The three evaluation sets the pairing produces.
#[derive(Debug, Clone, PartialEq)]
pub struct HookedSets {
    /// Pool HR matched per pair, in library order.
    pub vitals2: Vec<KeyedSeries>,
    /// Original library HR labels, order preserved.
    pub vitals3: Vec<VitalsSeries>,
    /// Text1 samples of the matched keys.
    pub text2: Vec<(String, String)>,
    /// How many of the text2 samples are distinct.
    pub unique_text2: usize,
}

/// Resolves a pairing into (Vitals2, Vitals3, Text2). Duplicate matches
/// are retained; uniqueness is reported alongside.
pub fn build_hooked_sets(
    pairing: &HookPairing,
    library: &[VitalsSeries],
    pool: &[KeyedSeries],
    text1_by_key: &BTreeMap<String, String>,
) -> Result<HookedSets, HookError> {
    let mut vitals2 = Vec::with_capacity(pairing.pairs.len());
    let mut vitals3 = Vec::with_capacity(pairing.pairs.len());
    let mut text2 = Vec::with_capacity(pairing.pairs.len());
    for pair in &pairing.pairs {
        let pool_entry = &pool[pair.pool_index];
        let text = text1_by_key
            .get(&pool_entry.key)
            .ok_or_else(|| HookError::BrokenKeyLink { key: pool_entry.key.clone() })?;
        vitals2.push(pool_entry.clone());
        vitals3.push(library[pair.library_index].clone());
        text2.push((pool_entry.key.clone(), text.clone()));
    }
    let unique_text2 =
        text2.iter().map(|(_, t)| t.as_str()).collect::<std::collections::BTreeSet<_>>().len();
    Ok(HookedSets { vitals2, vitals3, text2, unique_text2 })
}

/// Writes a pairing as `<library_index> <pool_index> <distance>` lines
/// under a header carrying both tags and the seed.
pub fn write_pairing<W: Write>(
    w: &mut W,
    pairing: &HookPairing,
    seed: u64,
) -> std::io::Result<()> {
    writeln!(
        w,
        "# library={} pool={} direction={:?} seed={}",
        pairing.library_tag, pairing.pool_tag, pairing.direction, seed
    )?;
    for p in &pairing.pairs {
        writeln!(w, "{} {} {}", p.library_index, p.pool_index, p.distance)?;
    }
    Ok(())
}

/// Reads a pairing file written by [`write_pairing`].
pub fn read_pairing<R: BufRead>(r: R) -> Result<Vec<HookPair>, HookError> {
    let mut pairs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| HookError::ParseError { line: i + 1, message: e.to_string() })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut it = trimmed.split_whitespace();
        let parse_err = |message: &str| HookError::ParseError { line: i + 1, message: message.into() };
        let library_index = it
            .next()
            .ok_or_else(|| parse_err("missing library index"))?
            .parse()
            .map_err(|_| parse_err("bad library index"))?;
        let pool_index = it
            .next()
            .ok_or_else(|| parse_err("missing pool index"))?
            .parse()
            .map_err(|_| parse_err("bad pool index"))?;
        let distance = it
            .next()
            .ok_or_else(|| parse_err("missing distance"))?
            .parse()
            .map_err(|_| parse_err("bad distance"))?;
        pairs.push(HookPair { library_index, pool_index, distance });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::VitalKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hr(values: Vec<f64>) -> VitalsSeries {
        VitalsSeries::new(VitalKind::HR, values, "bpm")
    }

    // Definitional oracle: direct summation in a separate pass layout.
    fn oracle_moments(series: &[f64]) -> MomentVector {
        let n = series.len() as f64;
        let mu: f64 = series.iter().copied().sum::<f64>() / n;
        let central = |p: i32| series.iter().map(|v| (v - mu).powi(p)).sum::<f64>() / n;
        let var = central(2);
        if var == 0.0 {
            MomentVector { mu, var, skew: 0.0, kurt: 0.0 }
        } else {
            MomentVector { mu, var, skew: central(3) / var.sqrt().powi(3), kurt: central(4) / var.powi(2) }
        }
    }

    fn oracle_hook(library: &[VitalsSeries], pool: &[VitalsSeries]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, l) in library.iter().enumerate() {
            let lm = oracle_moments(&l.values);
            let mut best_j = 0;
            let mut best_d = f64::INFINITY;
            for (j, p) in pool.iter().enumerate() {
                let pm = oracle_moments(&p.values);
                let d: f64 = lm
                    .as_array()
                    .iter()
                    .zip(pm.as_array().iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d < best_d {
                    best_d = d;
                    best_j = j;
                }
            }
            out.push((i, best_j));
        }
        out
    }

    #[test]
    fn moments_examples() {
        let m = moments(&[5.0, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(m, MomentVector { mu: 5.0, var: 0.0, skew: 0.0, kurt: 0.0 });

        let m = moments(&[0.0, 1.0]).unwrap();
        assert!((m.mu - 0.5).abs() < 1e-15);
        assert!((m.var - 0.25).abs() < 1e-15);
        assert!(m.skew.abs() < 1e-15);
        assert!((m.kurt - 1.0).abs() < 1e-15);

        assert_eq!(moments(&[]), Err(HookError::EmptySeries));
    }

    #[test]
    fn moments_match_oracle_on_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..200 {
            let n = rng.gen_range(1..50);
            let series: Vec<f64> = (0..n).map(|_| rng.gen_range(40.0..180.0)).collect();
            let m = moments(&series).unwrap();
            let o = oracle_moments(&series);
            for (a, b) in m.as_array().iter().zip(o.as_array().iter()) {
                let scale = b.abs().max(1.0);
                assert!((a - b).abs() / scale < 1e-9, "{m:?} vs {o:?}");
            }
        }
    }

    #[test]
    fn moments_long_series_relative_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let series: Vec<f64> = (0..1_000_000).map(|_| rng.gen_range(50.0..150.0)).collect();
        let m = moments(&series).unwrap();
        let o = oracle_moments(&series);
        for (a, b) in m.as_array().iter().zip(o.as_array().iter()) {
            assert!((a - b).abs() / b.abs().max(1.0) < 1e-9);
        }
    }

    #[test]
    fn euclid_examples() {
        let z = MomentVector { mu: 0.0, var: 0.0, skew: 0.0, kurt: 0.0 };
        assert_eq!(euclid(&z, &z), 0.0);
        let p = MomentVector { mu: 3.0, var: 4.0, skew: 0.0, kurt: 0.0 };
        assert_eq!(euclid(&z, &p), 5.0);
        assert_eq!(euclid(&p, &z), 5.0);
    }

    #[test]
    fn hook_paper_example_shape() {
        // Library [100,105] pairs with the nearest pool entry [100,102].
        let library = vec![hr(vec![100.0, 105.0])];
        let pool = vec![hr(vec![60.0, 61.0]), hr(vec![100.0, 102.0]), hr(vec![140.0, 150.0])];
        let pairing = hook(&library, &pool).unwrap();
        assert_eq!(pairing.pairs.len(), 1);
        assert_eq!(pairing.pairs[0].pool_index, 1);
    }

    #[test]
    fn hook_identity_when_pool_is_library() {
        let series: Vec<VitalsSeries> =
            (0..10).map(|i| hr(vec![60.0 + i as f64, 62.0 + i as f64, 65.0])).collect();
        let pairing = hook(&series, &series).unwrap();
        for (i, p) in pairing.pairs.iter().enumerate() {
            assert_eq!(p.library_index, i);
            assert_eq!(p.pool_index, i);
            assert_eq!(p.distance, 0.0);
        }
    }

    #[test]
    fn hook_matches_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let library: Vec<VitalsSeries> = (0..42)
            .map(|_| {
                let n = rng.gen_range(3..12);
                hr((0..n).map(|_| rng.gen_range(50.0..150.0)).collect())
            })
            .collect();
        let pool: Vec<VitalsSeries> = (0..1000)
            .map(|_| {
                let n = rng.gen_range(3..12);
                hr((0..n).map(|_| rng.gen_range(50.0..150.0)).collect())
            })
            .collect();
        let pairing = hook(&library, &pool).unwrap();
        let expected = oracle_hook(&library, &pool);
        let got: Vec<(usize, usize)> =
            pairing.pairs.iter().map(|p| (p.library_index, p.pool_index)).collect();
        assert_eq!(got, expected);

        // Scaling both sides by a positive constant preserves the pairing
        // decisions even though the distances change.
        let scale = 2.5;
        let lib2: Vec<VitalsSeries> =
            library.iter().map(|s| hr(s.values.iter().map(|v| v * scale).collect())).collect();
        let pool2: Vec<VitalsSeries> =
            pool.iter().map(|s| hr(s.values.iter().map(|v| v * scale).collect())).collect();
        let expected2 = oracle_hook(&lib2, &pool2);
        let got2: Vec<(usize, usize)> = hook(&lib2, &pool2)
            .unwrap()
            .pairs
            .iter()
            .map(|p| (p.library_index, p.pool_index))
            .collect();
        assert_eq!(got2, expected2);
    }

    #[test]
    fn hook_tie_breaks_to_smallest_pool_index() {
        let library = vec![hr(vec![80.0, 80.0])];
        // Two identical pool entries: index 1 and 2 both at distance 0.
        let pool = vec![hr(vec![200.0]), hr(vec![80.0, 80.0]), hr(vec![80.0, 80.0])];
        let pairing = hook(&library, &pool).unwrap();
        assert_eq!(pairing.pairs[0].pool_index, 1);
    }

    #[test]
    fn hook_reversed_direction() {
        let library = vec![hr(vec![60.0]), hr(vec![120.0])];
        let pool = vec![hr(vec![58.0]), hr(vec![118.0]), hr(vec![61.0])];
        let pairing = hook_directed(&library, &pool, HookDirection::ForEachPool).unwrap();
        assert_eq!(pairing.pairs.len(), 3);
        assert_eq!(pairing.pairs[0].library_index, 0);
        assert_eq!(pairing.pairs[1].library_index, 1);
        assert_eq!(pairing.pairs[2].library_index, 0);
    }

    #[test]
    fn build_hooked_sets_counts_and_links() {
        let library = vec![hr(vec![100.0, 105.0]), hr(vec![70.0, 72.0])];
        let pool = vec![
            KeyedSeries { key: "a".into(), series: hr(vec![100.0, 102.0]) },
            KeyedSeries { key: "b".into(), series: hr(vec![70.0, 71.0]) },
        ];
        let pool_series: Vec<VitalsSeries> = pool.iter().map(|p| p.series.clone()).collect();
        let pairing = hook(&library, &pool_series).unwrap();
        let mut text1 = BTreeMap::new();
        text1.insert("a".to_string(), "shortness of breath ards".to_string());
        text1.insert("b".to_string(), "chest pain".to_string());
        let sets = build_hooked_sets(&pairing, &library, &pool, &text1).unwrap();
        assert_eq!(sets.vitals2.len(), 2);
        assert_eq!(sets.vitals3.len(), 2);
        assert_eq!(sets.text2.len(), 2);
        assert_eq!(sets.unique_text2, 2);

        // Broken key link is reported.
        text1.remove("b");
        let err = build_hooked_sets(&pairing, &library, &pool, &text1).unwrap_err();
        assert_eq!(err, HookError::BrokenKeyLink { key: "b".into() });
    }

    #[test]
    fn empty_pairing_yields_empty_sets() {
        let pairing = HookPairing {
            pairs: vec![],
            library_tag: DatasetStage::Vitals3,
            pool_tag: DatasetStage::Vitals1,
            direction: HookDirection::ForEachLibrary,
        };
        let sets = build_hooked_sets(&pairing, &[], &[], &BTreeMap::new()).unwrap();
        assert!(sets.vitals2.is_empty() && sets.vitals3.is_empty() && sets.text2.is_empty());
    }

    #[test]
    fn pairing_file_round_trips() {
        let pairing = HookPairing {
            pairs: vec![
                HookPair { library_index: 0, pool_index: 3, distance: 1.25 },
                HookPair { library_index: 1, pool_index: 0, distance: 0.0 },
            ],
            library_tag: DatasetStage::Vitals3,
            pool_tag: DatasetStage::Vitals1,
            direction: HookDirection::ForEachLibrary,
        };
        let mut buf = Vec::new();
        write_pairing(&mut buf, &pairing, 7).unwrap();
        let back = read_pairing(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, pairing.pairs);
    }
}
