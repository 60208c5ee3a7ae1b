//! Two-tree filter banks and their validation.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Name of the bundled default set.
pub const DEFAULT_SET: &str = "nearsym13_19+qshift14";

const BUNDLED: &str = include_str!("../data/filters.txt");

const PR_TOL: f64 = 1e-10;
const DC_TOL_HIGH: f64 = 1e-10;
const DC_TOL_LOW: f64 = 1e-8;
const REVERSE_TOL: f64 = 1e-12;
const DELAY_TOL: f64 = 0.05;

/// FIR taps with the index of the tap sitting at time zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    pub taps: Vec<f64>,
    pub center: isize,
}

impl Filter {
    pub fn new(taps: Vec<f64>, center: isize) -> Self {
        Filter { taps, center }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn dc_gain(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Time reverse about the origin; the transpose of filtering.
    pub fn reversed(&self) -> Self {
        let mut taps = self.taps.clone();
        taps.reverse();
        Filter {
            taps,
            center: self.len() as isize - 1 - self.center,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Filter {
            taps: self.taps.iter().map(|t| t * s).collect(),
            center: self.center,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterPair {
    pub low: Filter,
    pub high: Filter,
}

/// Analysis and synthesis pairs of one stage of one tree.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub analysis: FilterPair,
    pub synthesis: FilterPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFilterSet {
    pub name: String,
    pub level1_tree_a: FilterBank,
    pub level1_tree_b: FilterBank,
    pub qshift_tree_a: FilterBank,
    pub qshift_tree_b: FilterBank,
}

impl WaveletFilterSet {
    /// Longest tap count over all filters.
    pub fn max_len(&self) -> usize {
        self.banks()
            .iter()
            .flat_map(|(_, b)| {
                [
                    b.analysis.low.len(),
                    b.analysis.high.len(),
                    b.synthesis.low.len(),
                    b.synthesis.high.len(),
                ]
            })
            .max()
            .unwrap_or(0)
    }

    fn banks(&self) -> [(&'static str, &FilterBank); 4] {
        [
            ("level1.a", &self.level1_tree_a),
            ("level1.b", &self.level1_tree_b),
            ("qshift.a", &self.qshift_tree_a),
            ("qshift.b", &self.qshift_tree_b),
        ]
    }

    /// Runs every invariant check, failing on the first violation.
    pub fn validate(&self) -> Result<()> {
        let fail = |check: String, residual: f64| Error::Validation {
            set: self.name.clone(),
            check,
            residual,
        };
        for (tag, bank) in self.banks() {
            for (side, pair) in [("analysis", &bank.analysis), ("synthesis", &bank.synthesis)] {
                if pair.low.is_empty() || pair.high.is_empty() {
                    return Err(fail(format!("{tag}.{side} non-empty taps"), f64::NAN));
                }
                let hi = pair.high.dc_gain().abs();
                if hi > DC_TOL_HIGH {
                    return Err(fail(format!("zero-DC highpass ({tag}.{side})"), hi));
                }
                let lo = (pair.low.dc_gain() - SQRT_2).abs();
                if lo > DC_TOL_LOW {
                    return Err(fail(format!("sqrt(2) lowpass DC gain ({tag}.{side})"), lo));
                }
            }
        }
        for (tag, bank) in self.banks() {
            let r = check_pr(&bank.analysis, &bank.synthesis);
            // Written so a NaN residual fails too.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(r <= PR_TOL) {
                return Err(fail(format!("perfect reconstruction ({tag})"), r));
            }
        }
        let a = &self.qshift_tree_a.analysis.low.taps;
        let b = &self.qshift_tree_b.analysis.low.taps;
        let rev = if a.len() == b.len() {
            a.iter().zip(b.iter().rev()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        } else {
            f64::INFINITY
        };
        if rev > REVERSE_TOL {
            return Err(fail("q-shift time-reverse symmetry".into(), rev));
        }
        let delay = check_half_sample_delay(&self.qshift_tree_a.analysis, &self.qshift_tree_b.analysis)?;
        if delay > DELAY_TOL {
            return Err(fail("half-sample delay".into(), delay));
        }
        Ok(())
    }

    /// Renders the set in the library text format.
    pub fn to_library_text(&self) -> String {
        let mut s = format!("[set {}]\n", self.name);
        for (tag, bank) in self.banks() {
            for (side, pair) in [("analysis", &bank.analysis), ("synthesis", &bank.synthesis)] {
                for (band, f) in [("low", &pair.low), ("high", &pair.high)] {
                    let _ = writeln!(s, "\n{tag}.{side}.{band}\ncenter {}", f.center);
                    for t in &f.taps {
                        let _ = writeln!(s, "{t:?}");
                    }
                }
            }
        }
        s
    }
}

/// The bundled default set, validated.
pub fn default_filter_set() -> WaveletFilterSet {
    parse_filter_set(BUNDLED, DEFAULT_SET).expect("bundled filter library is valid")
}

/// Text of the bundled library file.
pub fn bundled_library() -> &'static str {
    BUNDLED
}

/// Loads and validates the named set from a library file.
pub fn load_filter_set(path: impl AsRef<Path>, name: &str) -> Result<WaveletFilterSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_filter_set(&text, name)
}

/// Parses and validates the named set from library text.
pub fn parse_filter_set(text: &str, name: &str) -> Result<WaveletFilterSet> {
    let set = parse_library(text)?
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Parse(format!("filter set `{name}` not found")))?;
    set.validate()?;
    Ok(set)
}

#[derive(Default)]
struct RawSection {
    center: Option<isize>,
    taps: Vec<f64>,
}

const SECTIONS: [&str; 16] = [
    "level1.a.analysis.low",
    "level1.a.analysis.high",
    "level1.a.synthesis.low",
    "level1.a.synthesis.high",
    "level1.b.analysis.low",
    "level1.b.analysis.high",
    "level1.b.synthesis.low",
    "level1.b.synthesis.high",
    "qshift.a.analysis.low",
    "qshift.a.analysis.high",
    "qshift.a.synthesis.low",
    "qshift.a.synthesis.high",
    "qshift.b.analysis.low",
    "qshift.b.analysis.high",
    "qshift.b.synthesis.low",
    "qshift.b.synthesis.high",
];

/// Parses every set in a library file without validating it.
pub fn parse_library(text: &str) -> Result<Vec<WaveletFilterSet>> {
    let mut sets: Vec<(String, Vec<RawSection>)> = Vec::new();
    let mut current: Option<usize> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse(format!("line {}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix("[set ") {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err("unterminated set header".into()))?
                .trim();
            if name.is_empty() {
                return Err(err("empty set name".into()));
            }
            sets.push((name.to_string(), (0..SECTIONS.len()).map(|_| RawSection::default()).collect()));
            current = None;
            continue;
        }
        let (_, sections) = sets
            .last_mut()
            .ok_or_else(|| err("content before the first [set] header".into()))?;
        if let Some(i) = SECTIONS.iter().position(|s| *s == line) {
            if sections[i].center.is_some() || !sections[i].taps.is_empty() {
                return Err(err(format!("duplicate section `{line}`")));
            }
            current = Some(i);
            continue;
        }
        let i = current.ok_or_else(|| err(format!("unexpected `{line}` outside a section")))?;
        if let Some(c) = line.strip_prefix("center") {
            let c = c
                .trim()
                .parse::<isize>()
                .map_err(|e| err(format!("bad center: {e}")))?;
            sections[i].center = Some(c);
        } else {
            let v = line
                .parse::<f64>()
                .map_err(|e| err(format!("bad tap `{line}`: {e}")))?;
            if !v.is_finite() {
                return Err(err("non-finite tap".into()));
            }
            sections[i].taps.push(v);
        }
    }
    sets.into_iter()
        .map(|(name, sections)| {
            let mut filters = Vec::with_capacity(SECTIONS.len());
            for (tag, s) in SECTIONS.iter().zip(sections) {
                let center = s
                    .center
                    .ok_or_else(|| Error::Parse(format!("set `{name}`: section `{tag}` missing or has no center")))?;
                if s.taps.is_empty() {
                    return Err(Error::Parse(format!("set `{name}`: section `{tag}` has no taps")));
                }
                filters.push(Filter::new(s.taps, center));
            }
            let mut it = filters.into_iter();
            let mut bank = || {
                let mut next = || it.next().unwrap();
                FilterBank {
                    analysis: FilterPair { low: next(), high: next() },
                    synthesis: FilterPair { low: next(), high: next() },
                }
            };
            Ok(WaveletFilterSet {
                level1_tree_a: bank(),
                level1_tree_b: bank(),
                qshift_tree_a: bank(),
                qshift_tree_b: bank(),
                name,
            })
        })
        .collect()
}

fn wrap(i: isize, p: usize) -> usize {
    i.rem_euclid(p as isize) as usize
}

/// Highpass sampling phase of a decimated two-channel bank: odd-length
/// (whole-sample symmetric) banks keep the odd highpass samples.
pub fn highpass_phase(analysis: &FilterPair) -> isize {
    (analysis.low.len() % 2) as isize
}

/// One periodic two-channel analysis/synthesis round trip on a signal of
/// even length.
pub(crate) fn periodic_roundtrip(x: &[f64], analysis: &FilterPair, synthesis: &FilterPair) -> Vec<f64> {
    let p = x.len();
    let half = p / 2;
    let ph = highpass_phase(analysis);
    let (h0, h1) = (&analysis.low, &analysis.high);
    let (g0, g1) = (&synthesis.low, &synthesis.high);
    let mut lo = vec![0.0; half];
    let mut hi = vec![0.0; half];
    for k in 0..half {
        let base = 2 * k as isize;
        lo[k] = h0
            .taps
            .iter()
            .enumerate()
            .map(|(j, t)| t * x[wrap(base - j as isize + h0.center, p)])
            .sum();
        hi[k] = h1
            .taps
            .iter()
            .enumerate()
            .map(|(j, t)| t * x[wrap(base + ph - j as isize + h1.center, p)])
            .sum();
    }
    let mut y = vec![0.0; p];
    for k in 0..half {
        let base = 2 * k as isize;
        for (j, t) in g0.taps.iter().enumerate() {
            y[wrap(base + j as isize - g0.center, p)] += t * lo[k];
        }
        for (j, t) in g1.taps.iter().enumerate() {
            y[wrap(base + ph + j as isize - g1.center, p)] += t * hi[k];
        }
    }
    y
}

/// Maximum deviation of the two-channel round trip from a delayed identity
/// over 64 random length-64 signals (half-sample symmetric extension).
pub fn check_pr(analysis: &FilterPair, synthesis: &FilterPair) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5052);
    let n = 64usize;
    let span = [&analysis.low, &analysis.high, &synthesis.low, &synthesis.high]
        .iter()
        .map(|f| f.len())
        .max()
        .unwrap_or(0) as isize;
    let mut worst = 0.0f64;
    for _ in 0..64 {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ext: Vec<f64> = x.iter().chain(x.iter().rev()).copied().collect();
        let y = periodic_roundtrip(&ext, analysis, synthesis);
        let best = (-span..=span)
            .map(|d| {
                (0..n)
                    .map(|i| (y[i] - ext[wrap(i as isize - d, 2 * n)]).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(f64::INFINITY, f64::min);
        if best.is_nan() {
            return f64::INFINITY;
        }
        worst = worst.max(best);
    }
    worst
}

/// Group delay (samples, relative to the declared center) from the phase
/// slope of the frequency response over |w| <= pi/4.
pub fn group_delay(f: &Filter) -> Result<f64> {
    const POINTS: usize = 512;
    let norm: f64 = f.taps.iter().map(|t| t.abs()).sum();
    if norm == 0.0 {
        return Err(Error::DegenerateFilter("all taps are zero".into()));
    }
    let mut w = Vec::with_capacity(POINTS);
    let mut phase = Vec::with_capacity(POINTS);
    let mut prev: Option<f64> = None;
    for i in 0..POINTS {
        let om = -PI / 4.0 + (PI / 2.0) * i as f64 / (POINTS - 1) as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (j, t) in f.taps.iter().enumerate() {
            let n = j as f64 - f.center as f64;
            re += t * (om * n).cos();
            im -= t * (om * n).sin();
        }
        if re.hypot(im) < 1e-9 * norm {
            return Err(Error::DegenerateFilter(format!(
                "magnitude response vanishes at w = {om:.4}"
            )));
        }
        let mut ph = im.atan2(re);
        if let Some(p) = prev {
            while ph - p > PI {
                ph -= 2.0 * PI;
            }
            while ph - p < -PI {
                ph += 2.0 * PI;
            }
        }
        prev = Some(ph);
        w.push(om);
        phase.push(ph);
    }
    let n = POINTS as f64;
    let mw = w.iter().sum::<f64>() / n;
    let mp = phase.iter().sum::<f64>() / n;
    let num: f64 = w.iter().zip(&phase).map(|(a, b)| (a - mw) * (b - mp)).sum();
    let den: f64 = w.iter().map(|a| (a - mw) * (a - mw)).sum();
    Ok(-num / den)
}

/// `|delay(tree b lowpass) - delay(tree a lowpass) - 0.5|`.
pub fn check_half_sample_delay(tree_a_low: &FilterPair, tree_b_low: &FilterPair) -> Result<f64> {
    let da = group_delay(&tree_a_low.low)?;
    let db = group_delay(&tree_b_low.low)?;
    Ok((db - da - 0.5).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn haar() -> FilterBank {
        let s = 1.0 / SQRT_2;
        let analysis = FilterPair {
            low: Filter::new(vec![s, s], 0),
            high: Filter::new(vec![s, -s], 0),
        };
        let synthesis = FilterPair {
            low: analysis.low.reversed(),
            high: analysis.high.reversed(),
        };
        FilterBank { analysis, synthesis }
    }

    #[test]
    fn haar_is_pr() {
        let b = haar();
        assert!(check_pr(&b.analysis, &b.synthesis) <= 1e-12);
    }

    #[test]
    fn zero_highpass_breaks_pr() {
        let mut b = haar();
        b.analysis.high.taps = vec![0.0, 0.0];
        assert!(check_pr(&b.analysis, &b.synthesis) > 0.1);
    }

    #[test]
    fn default_set_loads_and_passes() {
        let set = default_filter_set();
        assert_eq!(set.name, DEFAULT_SET);
        for bank in [&set.level1_tree_a, &set.level1_tree_b, &set.qshift_tree_a, &set.qshift_tree_b] {
            assert!(check_pr(&bank.analysis, &bank.synthesis) <= 1e-10);
        }
        let d = check_half_sample_delay(&set.qshift_tree_a.analysis, &set.qshift_tree_b.analysis).unwrap();
        assert!(d <= 0.05, "delay error {d}");
        assert_eq!(set.max_len(), 19);
    }

    #[test]
    fn delay_of_integer_shift_and_identical_filters() {
        let set = default_filter_set();
        let a = set.qshift_tree_a.analysis.clone();
        let mut shifted = a.clone();
        shifted.low.center -= 1;
        let e = check_half_sample_delay(&a, &shifted).unwrap();
        assert!((e - 0.5).abs() < 1e-9, "{e}");
        let e = check_half_sample_delay(&a, &a).unwrap();
        assert!((e - 0.5).abs() < 1e-12, "{e}");
    }

    #[test]
    fn degenerate_filter_is_reported() {
        // 1 + z^-4 vanishes at w = +-pi/4, the ends of the fit band
        let f = Filter::new(vec![0.5, 0.0, 0.0, 0.0, 0.5], 2);
        assert!(matches!(group_delay(&f), Err(Error::DegenerateFilter(_))));
        assert!(group_delay(&Filter::new(vec![0.0; 3], 1)).is_err());
    }

    #[test]
    fn symmetric_filter_has_zero_delay() {
        let set = default_filter_set();
        let d = group_delay(&set.level1_tree_a.analysis.low).unwrap();
        assert!(d.abs() < 1e-10);
    }

    #[test]
    fn broken_highpass_dc_is_reported() {
        let set = default_filter_set();
        let mut text = set.to_library_text();
        // Append a tap of 0.1 to the first highpass section.
        text = text.replacen("level1.a.analysis.high\ncenter 9\n", "level1.a.analysis.high\ncenter 9\n0.1\n", 1);
        match parse_filter_set(&text, DEFAULT_SET) {
            Err(Error::Validation { check, residual, .. }) => {
                assert!(check.starts_with("zero-DC"), "{check}");
                assert!((residual - 0.1).abs() < 1e-9);
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_name_and_bad_text() {
        assert!(matches!(parse_filter_set(BUNDLED, "nope"), Err(Error::Parse(_))));
        assert!(matches!(parse_library("0.5\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_library("[set x]\nlevel1.a.analysis.low\ncenter 0\n1.0\n"), Err(Error::Parse(_))));
        assert!(matches!(parse_library("[set x]\nlevel1.a.analysis.low\ncenter q\n"), Err(Error::Parse(_))));
    }

    #[test]
    fn library_text_roundtrip() {
        let set = default_filter_set();
        let again = parse_filter_set(&set.to_library_text(), DEFAULT_SET).unwrap();
        assert_eq!(again, set);
    }

    #[test]
    fn reversal_is_involution() {
        let f = Filter::new(vec![1.0, 2.0, 3.0, 4.0], 1);
        let r = f.reversed();
        assert_eq!(r.taps, vec![4.0, 3.0, 2.0, 1.0]);
        assert_eq!(r.center, 2);
        assert_eq!(r.reversed(), f);
    }
}
