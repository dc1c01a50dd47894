//! Single-interleave byte-wise rANS with a 32-bit state in `[2^16, 2^24)`.

use crate::error::{Error, Result};

pub const DEFAULT_PRECISION: u32 = 12;
pub const MIN_PRECISION: u32 = 8;
pub const MAX_PRECISION: u32 = 16;
const STATE_LOW: u32 = 1 << 16;

/// Integer frequencies summing to `2^precision`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyTable {
    freqs: Vec<u32>,
    cumulative: Vec<u32>,
    precision: u32,
}

impl FrequencyTable {
    pub fn new(freqs: Vec<u32>, precision: u32) -> Result<Self> {
        check_precision(freqs.len(), precision)?;
        let mut cumulative = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u64;
        cumulative.push(0);
        for &f in &freqs {
            acc += f as u64;
            cumulative.push(acc.min(u32::MAX as u64) as u32);
        }
        if acc != 1 << precision {
            return Err(Error::Format(format!("frequencies sum to {acc}, expected {}", 1u64 << precision)));
        }
        Ok(Self { freqs, cumulative, precision })
    }

    /// Equal mass on `n` symbols, remainder to the lowest indices.
    pub fn uniform(n: usize, precision: u32) -> Result<Self> {
        check_precision(n, precision)?;
        let total = 1u32 << precision;
        let base = total / n as u32;
        let extra = (total % n as u32) as usize;
        Self::new((0..n).map(|i| base + (i < extra) as u32).collect(), precision)
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cumulative(&self) -> &[u32] {
        &self.cumulative
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Code length of `symbol` in bits.
    pub fn bits(&self, symbol: usize) -> f64 {
        self.precision as f64 - (self.freqs[symbol] as f64).log2()
    }

    fn lookup(&self, slot: u32) -> usize {
        self.cumulative.partition_point(|&c| c <= slot) - 1
    }
}

fn check_precision(classes: usize, precision: u32) -> Result<()> {
    if !(MIN_PRECISION..=MAX_PRECISION).contains(&precision) || classes == 0 || classes > 1 << precision {
        return Err(Error::Precision { classes, precision });
    }
    Ok(())
}

/// Largest-remainder rounding of `theta` to `2^precision` with every symbol
/// floored at 1. Ties go to the lower index.
pub fn quantize(theta: &[f64], precision: u32) -> Result<FrequencyTable> {
    let n = theta.len();
    check_precision(n, precision)?;
    let sum: f64 = theta.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > 1e-6 || theta.iter().any(|&p| p.is_nan() || p < 0.0) {
        return Err(Error::Unnormalized { row: 0, sum });
    }
    let spare = (1u64 << precision) - n as u64;
    let scaled: Vec<f64> = theta.iter().map(|&p| p / sum * spare as f64).collect();
    let mut extra: Vec<u64> = scaled.iter().map(|&v| v.floor() as u64).collect();
    let assigned: u64 = extra.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    let frac = |i: usize| scaled[i] - extra[i] as f64;
    if assigned <= spare {
        order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
        for &i in order.iter().cycle().take((spare - assigned) as usize) {
            extra[i] += 1;
        }
    } else {
        // Only reachable through rounding in `p / sum`.
        order.sort_by(|&a, &b| frac(a).total_cmp(&frac(b)).then(a.cmp(&b)));
        let mut excess = assigned - spare;
        for &i in order.iter().cycle() {
            if excess == 0 {
                break;
            }
            if extra[i] > 0 {
                extra[i] -= 1;
                excess -= 1;
            }
        }
    }
    FrequencyTable::new(extra.into_iter().map(|e| e as u32 + 1).collect(), precision)
}

/// Collects symbols in generation order and codes them in reverse on
/// [`finish`](Self::finish), so the decoder streams forward.
#[derive(Debug, Default)]
pub struct RansEncoder {
    pending: Vec<(u32, u32, u32)>,
}

impl RansEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, symbol: usize, table: &FrequencyTable) -> Result<()> {
        if symbol >= table.len() || table.freqs[symbol] == 0 {
            return Err(Error::ZeroFrequency { symbol });
        }
        self.pending.push((table.cumulative[symbol], table.freqs[symbol], table.precision));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        let mut state = STATE_LOW;
        let mut out = Vec::new();
        for &(start, freq, precision) in self.pending.iter().rev() {
            let limit = ((STATE_LOW >> precision) << 8) * freq;
            while state >= limit {
                out.push(state as u8);
                state >>= 8;
            }
            state = ((state / freq) << precision) + state % freq + start;
        }
        out.extend(state.to_be_bytes());
        out.reverse();
        out
    }
}

/// Forward decoder over a byte stream produced by [`RansEncoder`].
#[derive(Debug)]
pub struct RansDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    state: u32,
}

impl<'a> RansDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let head: [u8; 4] = bytes
            .get(..4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::Corrupt("stream shorter than the coder state".into()))?;
        let state = u32::from_le_bytes(head);
        if !(STATE_LOW..STATE_LOW << 8).contains(&state) {
            return Err(Error::Corrupt(format!("initial state {state:#x} out of range")));
        }
        Ok(Self { bytes, pos: 4, state })
    }

    pub fn decode(&mut self, table: &FrequencyTable) -> Result<usize> {
        let mask = (1u32 << table.precision) - 1;
        let slot = self.state & mask;
        let symbol = table.lookup(slot);
        let freq = table.freqs[symbol];
        self.state = freq * (self.state >> table.precision) + slot - table.cumulative[symbol];
        while self.state < STATE_LOW {
            let byte = *self.bytes.get(self.pos).ok_or_else(|| Error::Corrupt("stream ended mid-symbol".into()))?;
            self.state = (self.state << 8) | byte as u32;
            self.pos += 1;
        }
        Ok(symbol)
    }

    /// Checks that the stream was consumed exactly.
    pub fn finish(self) -> Result<()> {
        if self.state != STATE_LOW || self.pos != self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "final state {:#x}, {} trailing bytes",
                self.state,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn rans_encode(items: &[(usize, FrequencyTable)]) -> Result<Vec<u8>> {
    let mut enc = RansEncoder::new();
    for (symbol, table) in items {
        enc.push(*symbol, table)?;
    }
    Ok(enc.finish())
}

/// Decodes `count` symbols; `tables` sees the symbols decoded so far.
pub fn rans_decode<P>(bytes: &[u8], count: usize, mut tables: P) -> Result<Vec<usize>>
where
    P: FnMut(&[usize]) -> Result<FrequencyTable>,
{
    let mut dec = RansDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let table = tables(&out)?;
        out.push(dec.decode(&table)?);
    }
    dec.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{categorical, seeded};
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(&[0.5, 0.5], 12).unwrap().freqs(), &[2048, 2048]);
        assert_eq!(quantize(&[1.0, 0.0], 12).unwrap().freqs(), &[4095, 1]);
        assert_eq!(quantize(&[0.2, 0.3, 0.5], 12).unwrap().freqs().iter().sum::<u32>(), 4096);
        assert!(matches!(quantize(&[0.5; 2], 7), Err(Error::Precision { .. })));
        assert!(matches!(quantize(&vec![1.0 / 257.0; 257], 8), Err(Error::Precision { .. })));
        assert!(quantize(&[0.5, 0.6], 12).is_err());
    }

    #[test]
    fn quantize_ties_go_to_lower_index() {
        let t = quantize(&[1.0 / 3.0; 3], 8).unwrap();
        assert_eq!(t.freqs(), &[86, 85, 85]);
    }

    #[test]
    fn empty_stream_is_the_initial_state() {
        let bytes = rans_encode(&[]).unwrap();
        assert_eq!(bytes, vec![0, 0, 1, 0]);
        assert_eq!(rans_decode(&bytes, 0, |_| unreachable!()).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn uniform_round_trip() {
        let mut rng = seeded(1);
        let table = FrequencyTable::uniform(10, 12).unwrap();
        let symbols: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..10)).collect();
        let items: Vec<_> = symbols.iter().map(|&s| (s, table.clone())).collect();
        let bytes = rans_encode(&items).unwrap();
        assert_eq!(rans_decode(&bytes, symbols.len(), |_| Ok(table.clone())).unwrap(), symbols);
    }

    #[test]
    fn iid_length_is_near_entropy() {
        let theta = [0.6, 0.25, 0.1, 0.05];
        let table = quantize(&theta, 12).unwrap();
        let entropy: f64 = theta.iter().map(|p| -p * p.log2()).sum();
        let gap: f64 = theta.iter().enumerate().map(|(i, p)| p * (table.bits(i) + p.log2())).sum();
        let mut rng = seeded(2);
        let n = 50_000;
        let items: Vec<_> = (0..n).map(|_| (categorical(&mut rng, &theta), table.clone())).collect();
        let bits = 8.0 * rans_encode(&items).unwrap().len() as f64;
        let bound = n as f64 * (entropy + gap) + 32.0;
        // Sampling noise of the empirical code length: a few standard errors.
        let slack = 5.0 * (n as f64).sqrt();
        assert!(bits <= bound + slack, "{bits} > {bound}");
        assert!(bits >= n as f64 * entropy - slack);
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let table = quantize(&[0.9, 0.1], 12).unwrap();
        let items: Vec<_> = (0..200).map(|i| ((i % 7 == 0) as usize, table.clone())).collect();
        let bytes = rans_encode(&items).unwrap();
        for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(rans_decode(&bytes[..cut], 200, |_| Ok(table.clone())), Err(Error::Corrupt(_))));
        }
    }

    #[test]
    fn uniform_tables_decode_any_valid_stream() {
        let skewed = quantize(&[0.7, 0.2, 0.1], 12).unwrap();
        let items: Vec<_> = (0..64).map(|i| (i % 3, skewed.clone())).collect();
        let bytes = rans_encode(&items).unwrap();
        let uniform = FrequencyTable::uniform(3, 12).unwrap();
        let mut dec = RansDecoder::new(&bytes).unwrap();
        for _ in 0..64 {
            assert!(dec.decode(&uniform).unwrap() < 3);
        }
    }

    #[test]
    fn zero_frequency_symbol_is_rejected() {
        let mut enc = RansEncoder::new();
        let t = FrequencyTable::new(vec![256, 0], 8).unwrap();
        assert!(matches!(enc.push(1, &t), Err(Error::ZeroFrequency { symbol: 1 })));
        assert!(matches!(enc.push(2, &t), Err(Error::ZeroFrequency { symbol: 2 })));
    }

    #[test]
    fn callback_sees_forward_order() {
        let table = FrequencyTable::uniform(5, 10).unwrap();
        let symbols = [3usize, 1, 4, 1, 0, 2];
        let bytes = rans_encode(&symbols.map(|s| (s, table.clone()))).unwrap();
        let mut seen = Vec::new();
        rans_decode(&bytes, symbols.len(), |prev| {
            seen.push(prev.to_vec());
            Ok(table.clone())
        })
        .unwrap();
        for (i, prefix) in seen.iter().enumerate() {
            assert_eq!(prefix.as_slice(), &symbols[..i]);
        }
    }

    proptest! {
        #[test]
        fn quantized_tables_are_valid(raw in prop::collection::vec(0.0f64..1.0, 1..300), precision in 9u32..=16) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 0.0);
            let theta: Vec<f64> = raw.iter().map(|v| v / sum).collect();
            let t = quantize(&theta, precision).unwrap();
            prop_assert_eq!(t.freqs().iter().map(|&f| f as u64).sum::<u64>(), 1u64 << precision);
            prop_assert!(t.freqs().iter().all(|&f| f >= 1));
        }

        #[test]
        fn mixed_tables_round_trip(
            rows in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 2..20), 0usize..1000, 8u32..=16), 0..200),
        ) {
            let items: Vec<(usize, FrequencyTable)> = rows
                .iter()
                .map(|(raw, pick, p)| {
                    let sum: f64 = raw.iter().sum();
                    let theta: Vec<f64> = raw.iter().map(|v| v / sum).collect();
                    (pick % raw.len(), quantize(&theta, *p).unwrap())
                })
                .collect();
            let bytes = rans_encode(&items).unwrap();
            let decoded = rans_decode(&bytes, items.len(), |prev| Ok(items[prev.len()].1.clone())).unwrap();
            prop_assert_eq!(decoded, items.iter().map(|(s, _)| *s).collect::<Vec<_>>());
        }
    }
}
