//! CTC forced alignment over blank-expanded targets.
//!
//! States are `(blank, t1, blank, t2, …, tn, blank)`; blank is symbol 0.
//! Among equal-scoring paths the Viterbi backtrace prefers, at every frame
//! from the end, staying in a state over advancing by one over advancing by
//! two, and ends in the trailing blank over the final token.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::synthcorpus::ToneSegment;

pub const BLANK: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrid {
    /// `[T × V]` log-posteriors; column 0 is blank.
    pub logp: Array2<f64>,
    pub frame_hop_s: f64,
}

impl PosteriorGrid {
    pub fn new(logp: Array2<f64>, frame_hop_s: f64) -> Result<Self> {
        let g = Self { logp, frame_hop_s };
        g.validate(1e-6)?;
        Ok(g)
    }

    /// Each row must be a log-distribution within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if !(self.frame_hop_s > 0.0) {
            return invalid("frame hop must be positive");
        }
        if self.logp.ncols() < 2 {
            return invalid("posterior grid needs blank plus at least one symbol");
        }
        for (t, row) in self.logp.rows().into_iter().enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            if !(lse.abs() <= tol) {
                return invalid(format!("row {t} is not a log-distribution (logsumexp {lse})"));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.logp.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub token: usize,
    pub start_frame: usize,
    /// Inclusive.
    pub end_frame: usize,
    pub start_s: f64,
    pub end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub spans: Vec<TokenSpan>,
    pub path_logp: f64,
}

fn expand(tokens: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(2 * tokens.len() + 1);
    s.push(BLANK);
    for &t in tokens {
        s.push(t);
        s.push(BLANK);
    }
    s
}

/// Fewest frames a CTC path needs for `tokens`.
pub fn min_frames(tokens: &[usize]) -> usize {
    tokens.len() + tokens.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check(logp: ArrayView2<f64>, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return invalid("token sequence is empty");
    }
    let v = logp.ncols();
    if let Some(&bad) = tokens.iter().find(|&&t| t == BLANK || t >= v) {
        return invalid(format!("token {bad} is blank or outside vocabulary of size {v}"));
    }
    let needed = min_frames(tokens);
    if logp.nrows() < needed {
        return Err(Error::SequenceTooLong {
            tokens: tokens.len(),
            needed,
            frames: logp.nrows(),
        });
    }
    Ok(())
}

fn can_skip(states: &[usize], s: usize) -> bool {
    s >= 2 && states[s] != BLANK && states[s] != states[s - 2]
}

fn result_from_path(g: &PosteriorGrid, states: &[usize], path: &[usize]) -> AlignmentResult {
    let mut spans: Vec<TokenSpan> = Vec::new();
    let mut score = 0.0;
    for (t, &s) in path.iter().enumerate() {
        score += g.logp[[t, states[s]]];
        if s % 2 == 1 {
            match spans.last_mut() {
                Some(last) if last.end_frame + 1 == t && path[t - 1] == s => {
                    last.end_frame = t;
                    last.end_s = (t + 1) as f64 * g.frame_hop_s;
                }
                _ => spans.push(TokenSpan {
                    token: states[s],
                    start_frame: t,
                    end_frame: t,
                    start_s: t as f64 * g.frame_hop_s,
                    end_s: (t + 1) as f64 * g.frame_hop_s,
                }),
            }
        }
    }
    AlignmentResult {
        spans,
        path_logp: score,
    }
}

/// Viterbi forced alignment.
pub fn align(g: &PosteriorGrid, tokens: &[usize]) -> Result<AlignmentResult> {
    check(g.logp.view(), tokens)?;
    let states = expand(tokens);
    let (t_len, n) = (g.num_frames(), states.len());
    let mut score = vec![f64::NEG_INFINITY; n];
    // back[t][s]: predecessor step (0 stay, 1 advance one, 2 advance two).
    let mut back = vec![0u8; t_len * n];
    score[0] = g.logp[[0, states[0]]];
    score[1] = g.logp[[0, states[1]]];
    let mut next = vec![f64::NEG_INFINITY; n];
    for t in 1..t_len {
        for s in 0..n {
            let mut best = score[s];
            let mut step = 0u8;
            if s >= 1 && score[s - 1] > best {
                best = score[s - 1];
                step = 1;
            }
            if can_skip(&states, s) && score[s - 2] > best {
                best = score[s - 2];
                step = 2;
            }
            next[s] = best + g.logp[[t, states[s]]];
            back[t * n + s] = step;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut s = if score[n - 1] >= score[n - 2] { n - 1 } else { n - 2 };
    let mut path = vec![0; t_len];
    for t in (0..t_len).rev() {
        path[t] = s;
        if t > 0 {
            s -= back[t * n + s] as usize;
        }
    }
    Ok(result_from_path(g, &states, &path))
}

/// Exhaustive search over every valid path; only for small grids.
///
/// Ties resolve to the path whose state sequence, read from the last frame
/// backwards, is lexicographically largest, matching [`align`].
pub fn brute_force_align(g: &PosteriorGrid, tokens: &[usize]) -> Result<AlignmentResult> {
    const MAX_FRAMES: usize = 12;
    if g.num_frames() > MAX_FRAMES {
        return invalid(format!("brute force limited to {MAX_FRAMES} frames, got {}", g.num_frames()));
    }
    check(g.logp.view(), tokens)?;
    let states = expand(tokens);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut path = Vec::with_capacity(g.num_frames());

    fn rec(
        g: &PosteriorGrid,
        states: &[usize],
        path: &mut Vec<usize>,
        acc: f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let (t_len, n) = (g.num_frames(), states.len());
        if path.len() == t_len {
            let last = *path.last().unwrap();
            if last + 2 < n {
                return;
            }
            let better = match best {
                None => true,
                Some((b, bp)) => acc > *b || (acc == *b && path.iter().rev().cmp(bp.iter().rev()).is_gt()),
            };
            if better {
                *best = Some((acc, path.clone()));
            }
            return;
        }
        let t = path.len();
        let candidates: Vec<usize> = match path.last() {
            None => vec![0, 1],
            Some(&s) => {
                let mut c = vec![s];
                if s + 1 < n {
                    c.push(s + 1);
                }
                if s + 2 < n && can_skip(states, s + 2) {
                    c.push(s + 2);
                }
                c
            }
        };
        for s in candidates {
            path.push(s);
            rec(g, states, path, acc + g.logp[[t, states[s]]], best);
            path.pop();
        }
    }

    rec(g, &states, &mut path, 0.0, &mut best);
    let (_, p) = best.expect("feasibility checked");
    Ok(result_from_path(g, &states, &p))
}

/// Score of an explicit state path (indices into the blank-expanded target),
/// or `None` if the path is not a valid CTC path.
pub fn path_score(g: &PosteriorGrid, tokens: &[usize], path: &[usize]) -> Option<f64> {
    let states = expand(tokens);
    let n = states.len();
    if path.len() != g.num_frames() || path.is_empty() || path[0] > 1 || *path.last()? + 2 < n {
        return None;
    }
    for w in path.windows(2) {
        let ok = w[1] == w[0] || w[1] == w[0] + 1 || (w[1] == w[0] + 2 && can_skip(&states, w[1]));
        if !ok || w[1] >= n {
            return None;
        }
    }
    Some(path.iter().enumerate().map(|(t, &s)| g.logp[[t, states[s]]]).sum())
}

/// One phoneme with its tone, if tone-bearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TonedToken {
    pub sym: usize,
    pub tone: Option<String>,
}

/// Tone segments for the tone-bearing tokens, in order, with the alignment
/// span as segment bounds.
pub fn tones_from_tokens(tokens: &[TonedToken], alignment: &AlignmentResult) -> Result<Vec<ToneSegment>> {
    if tokens.len() != alignment.spans.len() {
        return Err(Error::TokenMismatch(format!(
            "{} tokens but {} aligned spans",
            tokens.len(),
            alignment.spans.len()
        )));
    }
    let mut out = Vec::new();
    for (i, (tok, span)) in tokens.iter().zip(&alignment.spans).enumerate() {
        if tok.sym != span.token {
            return Err(Error::TokenMismatch(format!(
                "position {i}: token {} aligned as {}",
                tok.sym, span.token
            )));
        }
        if let Some(tone) = &tok.tone {
            out.push(ToneSegment::new(tone, span.start_s, span.end_s)?);
        }
    }
    Ok(out)
}

/// JSON-lines record for one aligned utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub id: String,
    pub tokens: Vec<AlignedSym>,
    pub path_logp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedSym {
    pub sym: usize,
    pub start_s: f64,
    pub end_s: f64,
}

impl AlignmentRecord {
    pub fn new(id: &str, a: &AlignmentResult) -> Self {
        Self {
            id: id.to_string(),
            tokens: a
                .spans
                .iter()
                .map(|s| AlignedSym {
                    sym: s.token,
                    start_s: s.start_s,
                    end_s: s.end_s,
                })
                .collect(),
            path_logp: a.path_logp,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn normalize(raw: Array2<f64>) -> Array2<f64> {
        let mut g = raw;
        for mut row in g.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        g
    }

    fn random_grid(rng: &mut SplitMix64, t: usize, v: usize) -> PosteriorGrid {
        let raw = Array2::from_shape_fn((t, v), |_| 3.0 * rng.gaussian());
        PosteriorGrid::new(normalize(raw), 0.02).unwrap()
    }

    fn random_instance(rng: &mut SplitMix64) -> (PosteriorGrid, Vec<usize>) {
        loop {
            let v = 2 + rng.below(3) as usize;
            let n_tok = 1 + rng.below(3) as usize;
            let tokens: Vec<usize> = (0..n_tok).map(|_| 1 + rng.below(v as u64 - 1) as usize).collect();
            let t = 1 + rng.below(8) as usize;
            if t >= min_frames(&tokens) {
                return (random_grid(rng, t, v), tokens);
            }
        }
    }

    #[test]
    fn single_frame_single_token() {
        let g = PosteriorGrid::new(normalize(Array2::from_shape_vec((1, 3), vec![0.0, 5.0, 0.0]).unwrap()), 0.02).unwrap();
        let a = align(&g, &[1]).unwrap();
        assert_eq!((a.spans[0].start_frame, a.spans[0].end_frame), (0, 0));
        assert_eq!(a.path_logp, g.logp[[0, 1]]);
        assert_eq!((a.spans[0].start_s, a.spans[0].end_s), (0.0, 0.02));
    }

    #[test]
    fn repeated_tokens_are_separated_by_blank() {
        let mut rng = SplitMix64::new(4);
        for _ in 0..50 {
            let g = random_grid(&mut rng, 4, 3);
            let a = align(&g, &[1, 1]).unwrap();
            assert_eq!(a.spans.len(), 2);
            assert!(a.spans[1].start_frame > a.spans[0].end_frame + 1);
        }
        let g = random_grid(&mut rng, 1, 3);
        let err = align(&g, &[1, 1]).unwrap_err();
        assert!(err.to_string().contains("sequence too long for frames"));
    }

    #[test]
    fn uniform_posteriors_prefer_earliest_states() {
        let g = PosteriorGrid::new(Array2::from_elem((3, 2), -(2f64).ln()), 0.02).unwrap();
        let a = align(&g, &[1]).unwrap();
        let b = brute_force_align(&g, &[1]).unwrap();
        assert_eq!(a, b);
        // Path: token, blank, blank. Each state is entered as early as possible.
        assert_eq!((a.spans[0].start_frame, a.spans[0].end_frame), (0, 0));
        for t in 1..=8 {
            for tokens in [vec![1], vec![1, 2], vec![2, 2], vec![1, 2, 1]] {
                let g = PosteriorGrid::new(Array2::from_elem((t, 3), -(3f64).ln()), 0.02).unwrap();
                match (align(&g, &tokens), brute_force_align(&g, &tokens)) {
                    (Ok(a), Ok(b)) => assert_eq!(a, b),
                    (Err(a), Err(b)) => assert_eq!(a.to_string(), b.to_string()),
                    _ => panic!("feasibility disagrees at T = {t}"),
                }
            }
        }
    }

    #[test]
    fn dp_matches_exhaustive_search() {
        let mut rng = SplitMix64::new(2024);
        for _ in 0..500 {
            let (g, tokens) = random_instance(&mut rng);
            let a = align(&g, &tokens).unwrap();
            let b = brute_force_align(&g, &tokens).unwrap();
            assert!((a.path_logp - b.path_logp).abs() < 1e-9);
            assert_eq!(a.spans, b.spans, "tokens {tokens:?}");
        }
    }

    #[test]
    fn beats_random_valid_paths() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..50 {
            let (g, tokens) = random_instance(&mut rng);
            let a = align(&g, &tokens).unwrap();
            let n = 2 * tokens.len() + 1;
            let mut found = 0;
            while found < 100 {
                let mut p = vec![rng.below(2) as usize];
                for _ in 1..g.num_frames() {
                    p.push(p.last().unwrap() + rng.below(3) as usize);
                }
                if p.iter().all(|&s| s < n) {
                    if let Some(sc) = path_score(&g, &tokens, &p) {
                        assert!(a.path_logp >= sc);
                        found += 1;
                        continue;
                    }
                }
                found += usize::from(rng.below(50) == 0);
            }
        }
    }

    #[test]
    fn start_frames_strictly_increase() {
        let mut rng = SplitMix64::new(8);
        for _ in 0..200 {
            let (g, tokens) = random_instance(&mut rng);
            let a = align(&g, &tokens).unwrap();
            assert_eq!(a.spans.len(), tokens.len());
            for w in a.spans.windows(2) {
                assert!(w[1].start_frame > w[0].end_frame);
            }
            for (s, &tok) in a.spans.iter().zip(&tokens) {
                assert_eq!(s.token, tok);
            }
        }
    }

    #[test]
    fn infeasible_errors_match_between_dp_and_oracle() {
        let mut rng = SplitMix64::new(1);
        let g = random_grid(&mut rng, 2, 4);
        let a = align(&g, &[1, 2, 3]).unwrap_err().to_string();
        let b = brute_force_align(&g, &[1, 2, 3]).unwrap_err().to_string();
        assert_eq!(a, b);
        assert!(brute_force_align(&random_grid(&mut rng, 13, 2), &[1]).is_err());
        assert!(align(&g, &[]).is_err());
        assert!(align(&g, &[0]).is_err());
        assert!(align(&g, &[4]).is_err());
    }

    #[test]
    fn grid_rows_must_be_distributions() {
        assert!(PosteriorGrid::new(Array2::zeros((2, 3)), 0.02).is_err());
    }

    fn spans(bounds: &[(usize, usize, usize)]) -> AlignmentResult {
        AlignmentResult {
            spans: bounds
                .iter()
                .map(|&(tok, a, b)| TokenSpan {
                    token: tok,
                    start_frame: a,
                    end_frame: b,
                    start_s: a as f64 * 0.02,
                    end_s: (b + 1) as f64 * 0.02,
                })
                .collect(),
            path_logp: 0.0,
        }
    }

    #[test]
    fn tones_from_mixed_tokens() {
        let al = spans(&[(1, 0, 1), (2, 3, 5), (3, 6, 6), (1, 8, 9), (2, 10, 13)]);
        let toks: Vec<TonedToken> = [(1, None), (2, Some("T1")), (3, None), (1, Some("T3")), (2, Some("T2"))]
            .into_iter()
            .map(|(sym, t)| TonedToken {
                sym,
                tone: t.map(String::from),
            })
            .collect();
        let segs = tones_from_tokens(&toks, &al).unwrap();
        let got: Vec<(&str, f64)> = segs.iter().map(|s| (s.label.as_str(), s.t_c)).collect();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].0, "T1");
        assert!((got[0].1 - 0.09).abs() < 1e-12);
        assert!((got[1].1 - 0.18).abs() < 1e-12);
        assert!((got[2].1 - 0.24).abs() < 1e-12);
        let none: Vec<TonedToken> = toks.iter().map(|t| TonedToken { sym: t.sym, tone: None }).collect();
        assert!(tones_from_tokens(&none, &al).unwrap().is_empty());
        assert!(tones_from_tokens(&toks[..4], &al).is_err());
    }
}
