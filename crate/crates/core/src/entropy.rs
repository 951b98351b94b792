//! Autoregressive probability models over grid indices.
//!
//! All models expose integer frequency tables with a fixed total of 2^15, so
//! the rate the quantizer charges for a symbol is exactly the rate the range
//! coder pays (up to its constant flush overhead).

use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const PRECISION_BITS: u32 = 15;
pub const FREQ_TOTAL: u32 = 1 << PRECISION_BITS;

/// Adaptive counts are halved once their sum exceeds this.
pub const COUNT_CAP: u32 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    StaticHistogram,
    AdaptiveLaplace,
    ContextAdaptive,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::StaticHistogram,
        ModelKind::AdaptiveLaplace,
        ModelKind::ContextAdaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::StaticHistogram => "static",
            ModelKind::AdaptiveLaplace => "adaptive",
            ModelKind::ContextAdaptive => "context",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ModelKind::StaticHistogram => 0,
            ModelKind::AdaptiveLaplace => 1,
            ModelKind::ContextAdaptive => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ModelKind::StaticHistogram),
            1 => Some(ModelKind::AdaptiveLaplace),
            2 => Some(ModelKind::ContextAdaptive),
            _ => None,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" | "staticHistogram" | "static-histogram" => Ok(ModelKind::StaticHistogram),
            "adaptive" | "adaptiveLaplace" | "adaptive-laplace" => Ok(ModelKind::AdaptiveLaplace),
            "context" | "contextAdaptive" | "context-adaptive" => Ok(ModelKind::ContextAdaptive),
            _ => Err(Error::InvalidArgument(format!("unknown model kind '{s}'"))),
        }
    }
}

fn rate_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![f64::INFINITY; FREQ_TOTAL as usize + 1];
        for (f, slot) in t.iter_mut().enumerate().skip(1) {
            *slot = -(f as f64 / FREQ_TOTAL as f64).log2();
        }
        t
    })
}

/// `−log₂(freq / 2^15)`.
#[inline]
pub fn bits_for_frequency(freq: u32) -> f64 {
    rate_table()[freq as usize]
}

/// Integer frequency table with every entry ≥ 1 and a total of exactly 2^15.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolDistribution {
    freqs: Vec<u32>,
    cumulative: Vec<u32>,
}

impl SymbolDistribution {
    /// Quantizes nonnegative counts: `max(1, ⌊c·2^15/Σc⌋)`, then the total is
    /// corrected to 2^15 by largest remainder. All-zero counts give the
    /// uniform table.
    pub fn from_counts(counts: &[u32]) -> Self {
        let k = counts.len();
        assert!(k >= 2 && k <= FREQ_TOTAL as usize, "alphabet size {k} out of range");
        let sum: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let (scaled, denom): (Vec<u64>, u64) = if sum == 0 {
            (vec![1; k], k as u64)
        } else {
            (counts.iter().map(|&c| u64::from(c)).collect(), sum)
        };

        let total = u64::from(FREQ_TOTAL);
        let mut freqs = Vec::with_capacity(k);
        let mut remainders = Vec::with_capacity(k);
        for &c in &scaled {
            let num = c * total;
            freqs.push(((num / denom).max(1)) as u32);
            remainders.push(num % denom);
        }

        let assigned: i64 = freqs.iter().map(|&f| i64::from(f)).sum();
        let mut diff = i64::from(FREQ_TOTAL) - assigned;
        if diff != 0 {
            let mut order: Vec<usize> = (0..k).collect();
            if diff > 0 {
                // Largest remainders first, ties by index.
                order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
                let mut it = order.iter().cycle();
                while diff > 0 {
                    freqs[*it.next().unwrap()] += 1;
                    diff -= 1;
                }
            } else {
                // Excess only comes from the min-1 guard; take it back from the
                // smallest remainders among entries that can spare it.
                order.sort_by(|&a, &b| {
                    remainders[a]
                        .cmp(&remainders[b])
                        .then(freqs[b].cmp(&freqs[a]))
                        .then(a.cmp(&b))
                });
                while diff < 0 {
                    let mut progressed = false;
                    for &i in &order {
                        if diff == 0 {
                            break;
                        }
                        if freqs[i] > 1 {
                            freqs[i] -= 1;
                            diff += 1;
                            progressed = true;
                        }
                    }
                    assert!(progressed, "alphabet too large for the frequency total");
                }
            }
        }

        Self::from_freqs_unchecked(freqs)
    }

    fn from_freqs_unchecked(freqs: Vec<u32>) -> Self {
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cumulative.push(0);
        for &f in &freqs {
            acc += f;
            cumulative.push(acc);
        }
        debug_assert_eq!(acc, FREQ_TOTAL);
        Self { freqs, cumulative }
    }

    pub fn uniform(k: usize) -> Self {
        Self::from_counts(&vec![1; k])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    #[inline]
    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn total(&self) -> u32 {
        *self.cumulative.last().unwrap()
    }

    #[inline]
    pub fn freq(&self, symbol: u32) -> u32 {
        self.freqs[symbol as usize]
    }

    /// Sum of frequencies of all symbols below `symbol`.
    #[inline]
    pub fn cumulative(&self, symbol: u32) -> u32 {
        self.cumulative[symbol as usize]
    }

    /// Symbol whose cumulative interval contains `target < 2^15`.
    #[inline]
    pub fn symbol_for(&self, target: u32) -> u32 {
        debug_assert!(target < FREQ_TOTAL);
        // partition_point on cumulative[1..]: first s with cum[s+1] > target.
        self.cumulative[1..].partition_point(|&c| c <= target) as u32
    }

    #[inline]
    pub fn rate_bits(&self, symbol: u32) -> f64 {
        bits_for_frequency(self.freqs[symbol as usize])
    }

    pub fn probability(&self, symbol: u32) -> f64 {
        f64::from(self.freq(symbol)) / f64::from(FREQ_TOTAL)
    }
}

/// The interface the quantizer and the coder drive: query the conditional
/// distribution of the next symbol, then feed the chosen symbol back.
pub trait EntropyModel {
    fn alphabet_size(&self) -> usize;

    fn distribution(&self) -> &SymbolDistribution;

    fn update(&mut self, symbol: u32);

    fn rate_bits(&self, symbol: u32) -> f64 {
        self.distribution().rate_bits(symbol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyModelState {
    kind: ModelKind,
    k: usize,
    zero_index: u32,
    counts: Vec<Vec<u32>>,
    totals: Vec<u32>,
    dists: Vec<SymbolDistribution>,
    context: usize,
}

/// Creates a fresh model. `static_counts` is required for (and only for)
/// [`ModelKind::StaticHistogram`]. The zero level of a `k`-level grid is
/// index `k / 2`.
pub fn init_model(
    kind: ModelKind,
    k: usize,
    static_counts: Option<&[u32]>,
) -> Result<EntropyModelState> {
    if k < 2 || k > FREQ_TOTAL as usize {
        return Err(Error::InvalidArgument(format!(
            "alphabet size must be in [2, {FREQ_TOTAL}], got {k}"
        )));
    }
    let contexts = match kind {
        ModelKind::StaticHistogram => {
            let counts = static_counts.ok_or_else(|| {
                Error::InvalidArgument("static histogram model needs counts".into())
            })?;
            if counts.len() != k {
                return Err(Error::shape(format!(
                    "static histogram has {} counts for alphabet size {k}",
                    counts.len()
                )));
            }
            return Ok(EntropyModelState {
                kind,
                k,
                zero_index: (k / 2) as u32,
                counts: vec![counts.to_vec()],
                totals: vec![counts.iter().sum()],
                dists: vec![SymbolDistribution::from_counts(counts)],
                context: 0,
            });
        }
        ModelKind::AdaptiveLaplace => 1,
        ModelKind::ContextAdaptive => 2,
    };
    if static_counts.is_some() {
        return Err(Error::InvalidArgument(format!(
            "{} model takes no static counts",
            kind.as_str()
        )));
    }
    let uniform = SymbolDistribution::uniform(k);
    Ok(EntropyModelState {
        kind,
        k,
        zero_index: (k / 2) as u32,
        counts: vec![vec![1; k]; contexts],
        totals: vec![k as u32; contexts],
        dists: vec![uniform; contexts],
        context: 0,
    })
}

impl EntropyModelState {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn current_context(&self) -> usize {
        self.context
    }

    /// Counts of the active context.
    pub fn counts(&self) -> &[u32] {
        &self.counts[self.context]
    }

    fn bump(&mut self, ctx: usize, symbol: usize) {
        let counts = &mut self.counts[ctx];
        counts[symbol] += 1;
        self.totals[ctx] += 1;
        if self.totals[ctx] > COUNT_CAP {
            let mut total = 0;
            for c in counts.iter_mut() {
                *c = (*c + 1) / 2;
                total += *c;
            }
            self.totals[ctx] = total;
        }
        self.dists[ctx] = SymbolDistribution::from_counts(counts);
    }
}

impl EntropyModel for EntropyModelState {
    fn alphabet_size(&self) -> usize {
        self.k
    }

    #[inline]
    fn distribution(&self) -> &SymbolDistribution {
        &self.dists[self.context]
    }

    fn update(&mut self, symbol: u32) {
        debug_assert!((symbol as usize) < self.k);
        match self.kind {
            ModelKind::StaticHistogram => {}
            ModelKind::AdaptiveLaplace => self.bump(0, symbol as usize),
            ModelKind::ContextAdaptive => {
                self.bump(self.context, symbol as usize);
                self.context = usize::from(symbol != self.zero_index);
            }
        }
    }
}

/// Everything needed to construct identical fresh models on the encoder and
/// decoder side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub k: usize,
    pub static_counts: Option<Vec<u16>>,
}

impl ModelSpec {
    pub fn adaptive(kind: ModelKind, k: usize) -> Self {
        Self {
            kind,
            k,
            static_counts: None,
        }
    }

    /// Static histogram spec fitted to a symbol histogram. Counts are scaled
    /// to fit the 16-bit header fields, keeping nonzero counts nonzero.
    pub fn static_from_histogram(k: usize, histogram: &[u64]) -> Self {
        let max = histogram.iter().copied().max().unwrap_or(0);
        let counts = histogram
            .iter()
            .map(|&c| {
                if max <= u64::from(u16::MAX) || c == 0 {
                    c as u16
                } else {
                    ((c * u64::from(u16::MAX)) / max).max(1) as u16
                }
            })
            .collect();
        Self {
            kind: ModelKind::StaticHistogram,
            k,
            static_counts: Some(counts),
        }
    }

    pub fn build(&self) -> Result<EntropyModelState> {
        let counts: Option<Vec<u32>> = self
            .static_counts
            .as_ref()
            .map(|c| c.iter().map(|&v| u32::from(v)).collect());
        init_model(self.kind, self.k, counts.as_deref())
    }
}
