//! The ten sequence patterns and their realisation as concrete problems.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::domain::DomainSpec;
use super::problem::{ProblemSpec, SizeTriple, SplitSizes};
use super::upper::{UpperTask, NUM_UPPER_TASKS};
use crate::error::{Error, Result};
use crate::seed::rng_from;

pub const NUM_DOMAINS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pattern {
    #[serde(rename = "S_pl")]
    Plasticity,
    #[serde(rename = "S_minus")]
    Minus,
    #[serde(rename = "S_out")]
    Out,
    #[serde(rename = "S_out_star")]
    OutStar,
    #[serde(rename = "S_out_2star")]
    OutTwoStar,
    #[serde(rename = "S_in")]
    In,
    #[serde(rename = "S_sp")]
    Sp,
    #[serde(rename = "S_few")]
    Few,
    #[serde(rename = "S_plus")]
    Plus,
    #[serde(rename = "S_long")]
    Long,
}

impl Pattern {
    pub const ALL: [Pattern; 10] = [
        Pattern::Plasticity,
        Pattern::Minus,
        Pattern::Out,
        Pattern::OutStar,
        Pattern::OutTwoStar,
        Pattern::In,
        Pattern::Sp,
        Pattern::Few,
        Pattern::Plus,
        Pattern::Long,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Plasticity => "S_pl",
            Pattern::Minus => "S_minus",
            Pattern::Out => "S_out",
            Pattern::OutStar => "S_out_star",
            Pattern::OutTwoStar => "S_out_2star",
            Pattern::In => "S_in",
            Pattern::Sp => "S_sp",
            Pattern::Few => "S_few",
            Pattern::Plus => "S_plus",
            Pattern::Long => "S_long",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Sequence(format!("unknown pattern `{s}`")))
    }
}

/// Size class of a problem's training set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeKind {
    Plus,
    /// Few distinct inputs, all class cells.
    MinusPerceptual,
    /// All inputs, few class cells.
    MinusLatent,
    Few,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeTable {
    pub plus: SizeTriple,
    pub minus_perceptual: SizeTriple,
    pub minus_latent: SizeTriple,
    pub few: SizeTriple,
    pub val: SizeTriple,
    pub val_few: SizeTriple,
    pub test: SizeTriple,
}

impl Default for SizeTable {
    fn default() -> Self {
        Self {
            plus: SizeTriple::new(4000, None, None),
            minus_perceptual: SizeTriple::new(1500, Some(40), None),
            minus_latent: SizeTriple::new(1500, None, Some(30)),
            few: SizeTriple::new(10, Some(20), Some(10)),
            val: SizeTriple::new(1000, None, None),
            val_few: SizeTriple::new(10, Some(20), Some(10)),
            test: SizeTriple::new(2000, None, None),
        }
    }
}

impl SizeTable {
    pub fn for_kind(&self, kind: SizeKind) -> SplitSizes {
        let (train, val) = match kind {
            SizeKind::Plus => (self.plus, self.val),
            SizeKind::MinusPerceptual => (self.minus_perceptual, self.val),
            SizeKind::MinusLatent => (self.minus_latent, self.val),
            SizeKind::Few => (self.few, self.val_few),
        };
        SplitSizes {
            train,
            val,
            test: self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub pattern: Pattern,
    pub seed: u64,
    /// Only `S_long` accepts a length other than 6 (default 20).
    #[serde(default)]
    pub length: Option<usize>,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    /// Input dimension of the last `S_sp` problem.
    #[serde(default = "default_variant_dim")]
    pub variant_input_dim: usize,
    #[serde(default = "default_noise")]
    pub noise_scale: f32,
    #[serde(default)]
    pub sizes: SizeTable,
}

fn default_input_dim() -> usize {
    16
}
fn default_variant_dim() -> usize {
    32
}
fn default_noise() -> f32 {
    1.0
}

impl SequenceSpec {
    pub fn new(pattern: Pattern, seed: u64) -> Self {
        Self {
            pattern,
            seed,
            length: None,
            input_dim: default_input_dim(),
            variant_input_dim: default_variant_dim(),
            noise_scale: default_noise(),
            sizes: SizeTable::default(),
        }
    }

    pub fn length(&self) -> usize {
        match self.pattern {
            Pattern::Long => self.length.unwrap_or(20),
            _ => 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pattern != Pattern::Long && self.length.is_some_and(|l| l != 6) {
            return Err(Error::Sequence(format!("{} has length 6", self.pattern)));
        }
        if self.length() == 0 {
            return Err(Error::Sequence("sequence length must be positive".into()));
        }
        if self.pattern == Pattern::Sp && self.variant_input_dim == self.input_dim {
            return Err(Error::Sequence("S_sp needs a different input dimension for its last problem".into()));
        }
        Ok(())
    }
}

/// Sharing structure of a fixed-length pattern: per problem, a domain
/// role, an upper-task role (none for single-input problems) and a size.
/// Equal roles mean shared components; different roles, distinct ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub domains: Vec<usize>,
    pub uppers: Vec<Option<usize>>,
    pub sizes: Vec<SizeKind>,
}

/// The fixed layout of every pattern except `S_long`.
pub fn layout(pattern: Pattern) -> Option<Layout> {
    use SizeKind::*;
    let all6 = vec![1, 2, 3, 4, 5, 6];
    let some = |v: &[usize]| v.iter().map(|&g| Some(g)).collect::<Vec<_>>();
    let minus5 = |first: SizeKind, rest: SizeKind| {
        let mut v = vec![first];
        v.extend([rest; 5]);
        v
    };
    Some(match pattern {
        Pattern::Plasticity => Layout {
            domains: all6.clone(),
            uppers: some(&all6),
            sizes: vec![Plus; 6],
        },
        Pattern::Minus => Layout {
            domains: vec![1, 2, 3, 4, 5, 1],
            uppers: some(&[1, 2, 3, 4, 5, 1]),
            sizes: minus5(Plus, MinusPerceptual),
        },
        Pattern::Out => Layout {
            domains: vec![1, 2, 3, 4, 5, 1],
            uppers: some(&all6),
            sizes: minus5(Plus, MinusPerceptual),
        },
        Pattern::OutStar => Layout {
            domains: vec![1, 1, 3, 4, 5, 1],
            uppers: some(&all6),
            sizes: vec![MinusPerceptual, Plus, MinusPerceptual, MinusPerceptual, MinusPerceptual, MinusPerceptual],
        },
        Pattern::OutTwoStar => Layout {
            domains: vec![1, 1, 3, 4, 5, 1],
            uppers: some(&[1, 2, 3, 4, 5, 1]),
            sizes: vec![MinusPerceptual, Plus, MinusPerceptual, MinusPerceptual, MinusPerceptual, MinusPerceptual],
        },
        Pattern::In | Pattern::Sp => Layout {
            domains: all6.clone(),
            uppers: some(&[1, 2, 3, 4, 5, 1]),
            sizes: minus5(Plus, MinusLatent),
        },
        Pattern::Few => Layout {
            domains: vec![1, 2, 3, 1, 5, 2],
            uppers: vec![None, None, Some(3), Some(4), Some(5), Some(4)],
            sizes: vec![Plus, Plus, MinusPerceptual, MinusPerceptual, MinusPerceptual, Few],
        },
        Pattern::Plus => Layout {
            domains: vec![1, 2, 3, 4, 5, 1],
            uppers: some(&[1, 2, 3, 4, 5, 1]),
            sizes: {
                let mut v = vec![MinusPerceptual; 5];
                v.push(Plus);
                v
            },
        },
        Pattern::Long => return None,
    })
}

/// Assigns distinct values to roles, in order of first appearance.
fn assign<R: Rng>(roles: &[usize], pool: &mut Vec<usize>, rng: &mut R) -> Result<HashMap<usize, usize>> {
    let mut out = HashMap::new();
    for &r in roles {
        if out.contains_key(&r) {
            continue;
        }
        if pool.is_empty() {
            return Err(Error::Sequence("not enough distinct components for the pattern".into()));
        }
        let i = rng.random_range(0..pool.len());
        out.insert(r, pool.swap_remove(i));
    }
    Ok(out)
}

/// Long-sequence layout: components drawn with replacement; in the first
/// 5/6 of the sequence a problem is large with probability 1/3, and any
/// problem is few-shot with probability 1/10; the rest are small, with a
/// random choice between the two kinds of restriction.
fn long_layout<R: Rng>(len: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>, Vec<SizeKind>) {
    let early = (len * 5).div_ceil(6);
    let mut domains = Vec::with_capacity(len);
    let mut uppers = Vec::with_capacity(len);
    let mut sizes = Vec::with_capacity(len);
    for t in 0..len {
        domains.push(rng.random_range(1..=NUM_DOMAINS));
        uppers.push(rng.random_range(1..=NUM_UPPER_TASKS));
        let u: f64 = rng.random();
        sizes.push(if u < 0.1 {
            SizeKind::Few
        } else if t < early && u < 0.1 + 1.0 / 3.0 {
            SizeKind::Plus
        } else if rng.random::<bool>() {
            SizeKind::MinusPerceptual
        } else {
            SizeKind::MinusLatent
        });
    }
    (domains, uppers, sizes)
}

/// Concrete problems of a sequence, in order.
pub fn realize_sequence(seq: &SequenceSpec) -> Result<Vec<ProblemSpec>> {
    seq.validate()?;
    let mut rng = rng_from(&[b"sequence", &seq.seed.to_le_bytes(), seq.pattern.name().as_bytes()]);
    let (domain_ids, g_ids, kinds) = match layout(seq.pattern) {
        Some(l) => {
            let mut dpool: Vec<usize> = (1..=NUM_DOMAINS).collect();
            let dmap = assign(&l.domains, &mut dpool, &mut rng)?;
            let mut gpool: Vec<usize> = (1..=NUM_UPPER_TASKS).collect();
            let mut gmap = HashMap::new();
            if matches!(seq.pattern, Pattern::In | Pattern::Sp) {
                // the transferred task must not be learnable cell by cell
                let interacting: Vec<usize> = gpool
                    .iter()
                    .copied()
                    .filter(|&g| UpperTask::new(g).expect("valid id").pattern().is_interacting())
                    .collect();
                let g = *interacting.choose(&mut rng).expect("nonempty");
                gpool.retain(|&x| x != g);
                gmap.insert(1, g);
            }
            let roles: Vec<usize> = l.uppers.iter().flatten().copied().filter(|r| !gmap.contains_key(r)).collect();
            gmap.extend(assign(&roles, &mut gpool, &mut rng)?);
            (
                l.domains.iter().map(|r| dmap[r]).collect::<Vec<_>>(),
                l.uppers.iter().map(|r| r.map(|r| gmap[&r])).collect::<Vec<_>>(),
                l.sizes,
            )
        }
        None => {
            let (d, g, s) = long_layout(seq.length(), &mut rng);
            (d, g.into_iter().map(Some).collect(), s)
        }
    };
    let len = domain_ids.len();
    (0..len)
        .map(|t| {
            let mut domain = DomainSpec::generate(domain_ids[t], seq.input_dim, seq.noise_scale, seq.seed)?;
            if seq.pattern == Pattern::Sp && t + 1 == len {
                domain = domain.embedded(seq.variant_input_dim)?;
            }
            Ok(ProblemSpec {
                problem_id: format!("p{:02}", t + 1),
                index: t,
                domain,
                upper: g_ids[t].map(|g| UpperTask::new(g).expect("valid id")),
                sizes: seq.sizes.for_kind(kinds[t]),
                seed: seq.seed,
            })
        })
        .collect()
}

/// Checks realised problems against the pattern's sharing structure.
pub fn check_pattern_fidelity(seq: &SequenceSpec, problems: &[ProblemSpec]) -> Result<()> {
    let fail = |msg: String| Err(Error::Sequence(format!("{}: {msg}", seq.pattern)));
    if problems.len() != seq.length() {
        return fail(format!("{} problems, expected {}", problems.len(), seq.length()));
    }
    let Some(l) = layout(seq.pattern) else {
        for p in problems {
            if !(1..=NUM_DOMAINS).contains(&p.domain.domain_id) || p.upper.is_none() {
                return fail(format!("{} is not a pair problem over a known domain", p.problem_id));
            }
        }
        return Ok(());
    };
    for a in 0..problems.len() {
        let (pa, la) = (&problems[a], a);
        if l.sizes[la] == SizeKind::Few && pa.sizes.train != seq.sizes.few {
            return fail(format!("{} should be few-shot", pa.problem_id));
        }
        if pa.upper.map(|u| u.g_id).is_some() != l.uppers[la].is_some() {
            return fail(format!("{} has the wrong task kind", pa.problem_id));
        }
        for b in 0..a {
            let pb = &problems[b];
            let same_d = pa.domain.domain_id == pb.domain.domain_id;
            if same_d != (l.domains[a] == l.domains[b]) {
                return fail(format!("domains of {} and {} break the pattern", pb.problem_id, pa.problem_id));
            }
            if let (Some(ga), Some(gb), Some(ra), Some(rb)) = (pa.upper, pb.upper, l.uppers[a], l.uppers[b]) {
                if (ga.g_id == gb.g_id) != (ra == rb) {
                    return fail(format!("upper tasks of {} and {} break the pattern", pb.problem_id, pa.problem_id));
                }
            }
        }
    }
    let last = problems.last().expect("nonempty");
    let variant = last.domain.input_dim() != seq.input_dim;
    if variant != (seq.pattern == Pattern::Sp) {
        return fail("only the last S_sp problem changes input space".into());
    }
    Ok(())
}
