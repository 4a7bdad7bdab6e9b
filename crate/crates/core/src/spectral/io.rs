use std::fmt::Write as _;

use super::affinity::AffinityGraph;
use super::lanczos::SpectralEmbedding;
use super::sparse::CsrMatrix;
use crate::attribution::io::{len_u32, put_f64s, LeReader};
use crate::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";

/// `EMB1`: magic, `u32 n`, `u32 q`, `q` eigenvalues, then `Φ` row-major, all f64.
pub fn encode_emb1(e: &SpectralEmbedding) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 8 * (e.q + e.phi.len()));
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&len_u32(e.n, "sample count")?.to_le_bytes());
    out.extend_from_slice(&len_u32(e.q, "embedding dimension")?.to_le_bytes());
    put_f64s(&mut out, &e.eigenvalues);
    put_f64s(&mut out, &e.phi);
    Ok(out)
}

/// Residuals are not stored and come back as zeros.
pub fn decode_emb1(bytes: &[u8]) -> Result<SpectralEmbedding> {
    let mut r = LeReader::new(bytes);
    r.magic(EMB_MAGIC)?;
    let n = r.u32()? as usize;
    let q = r.u32()? as usize;
    let eigenvalues = r.f64s(q)?;
    let phi = r.f64s(n * q)?;
    r.expect_eof()?;
    Ok(SpectralEmbedding {
        n,
        q,
        eigenvalues,
        phi,
        residuals: vec![0.0; q],
    })
}

/// One `i j value` line per nonzero.
pub fn affinity_to_coo(a: &AffinityGraph) -> String {
    let mut s = String::new();
    for (i, j, v) in a.entries.triplets() {
        let _ = writeln!(s, "{i} {j} {v}");
    }
    s
}

pub fn affinity_from_coo(text: &str, n: usize, k: usize) -> Result<AffinityGraph> {
    let mut trip = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("affinity line {}: `{line}`", ln + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        let i = parts[0].parse().map_err(|_| bad())?;
        let j = parts[1].parse().map_err(|_| bad())?;
        let v = parts[2].parse().map_err(|_| bad())?;
        trip.push((i, j, v));
    }
    Ok(AffinityGraph {
        k,
        entries: CsrMatrix::from_triplets(n, trip)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::pairwise_points;
    use crate::spectral::knn_affinity;

    #[test]
    fn emb1_round_trip() {
        let e = SpectralEmbedding {
            n: 3,
            q: 2,
            eigenvalues: vec![0.0, 0.25],
            phi: vec![1.0, -2.0, 3.5, 0.0, 1e-300, 7.0],
            residuals: vec![0.0; 2],
        };
        let b = encode_emb1(&e).unwrap();
        assert_eq!(b.len(), 12 + 8 * 8);
        assert_eq!(decode_emb1(&b).unwrap(), e);
        assert!(decode_emb1(&b[..20]).is_err());
        assert!(decode_emb1(b"EMB2\0\0\0\0\0\0\0\0").is_err());
    }

    #[test]
    fn coo_round_trip() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 3.0].iter().map(|x| vec![*x]).collect();
        let a = knn_affinity(&pairwise_points(&pts).unwrap(), 1).unwrap();
        let text = affinity_to_coo(&a);
        assert!(text.contains("1 2 0.5"));
        assert_eq!(affinity_from_coo(&text, 3, 1).unwrap(), a);
        assert!(affinity_from_coo("0 1", 3, 1).is_err());
    }
}
