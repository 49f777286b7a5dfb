//! Nearest-neighbor frame retrieval in embedding space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::losses::l2_distance;
use crate::nn::{EncoderModel, Matrix};
use crate::sequence::FrameSequence;

/// Index and distance of the frame closest to `query`; the lowest index wins ties.
pub fn nearest_frame(query: &[f64], video: &Matrix) -> Result<(usize, f64)> {
    if video.rows == 0 {
        return Err(Error::EmptyInput("cannot search an empty video"));
    }
    check_dim(video.cols, query.len())?;
    let mut best = (0, f64::INFINITY);
    for (i, row) in video.iter_rows().enumerate() {
        let d = l2_distance(query, row)?;
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

/// A query frame taken from some video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryFrame {
    pub query_id: String,
    pub video_id: String,
    pub frame_index: usize,
    pub features: Vec<f32>,
    pub phase: Option<usize>,
}

impl QueryFrame {
    pub fn from_video(query_id: impl Into<String>, video: &FrameSequence, frame_index: usize) -> Result<Self> {
        if frame_index >= video.len() {
            return Err(Error::InvalidConfig(format!(
                "query frame {frame_index} is outside video {} ({} frames)",
                video.video_id,
                video.len()
            )));
        }
        Ok(Self {
            query_id: query_id.into(),
            video_id: video.video_id.clone(),
            frame_index,
            features: video.frame(frame_index).to_vec(),
            phase: video.labels.as_ref().map(|l| l[frame_index]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub video_id: String,
    pub frame_index: usize,
    pub distance: f64,
    pub phase: Option<usize>,
}

/// Best frame of every searched video, sorted by ascending distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: QueryFrame,
    pub hits: Vec<RetrievalHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub results: Vec<RetrievalResult>,
    /// Fraction of labeled hits sharing the labeled query's phase, counting
    /// only hits from videos other than the query's own. `None` when no such
    /// pair exists.
    pub agreement_rate: Option<f64>,
    pub agreement_pairs: usize,
}

/// Embeds every corpus video once, then answers each query with its nearest
/// frame per video.
pub fn retrieval_report(
    encoder: &EncoderModel,
    queries: &[QueryFrame],
    corpus: &[FrameSequence],
) -> Result<RetrievalReport> {
    for v in corpus {
        check_dim(encoder.input_dim(), v.feature_dim).map_err(|e| e.in_video(&v.video_id))?;
        if v.is_empty() {
            return Err(Error::EmptyInput("cannot search an empty video").in_video(&v.video_id));
        }
    }
    let embedded = corpus
        .par_iter()
        .map(|v| encoder.forward_batch(&v.frames_matrix(0..v.len())))
        .collect::<Result<Vec<_>>>()?;

    let results = queries
        .par_iter()
        .map(|q| {
            check_dim(encoder.input_dim(), q.features.len())?;
            let x: Vec<f64> = q.features.iter().map(|&v| f64::from(v)).collect();
            let e = encoder.forward(&x)?;
            let mut hits = corpus
                .iter()
                .zip(&embedded)
                .map(|(video, emb)| {
                    let (frame_index, distance) = nearest_frame(&e, emb)?;
                    Ok(RetrievalHit {
                        video_id: video.video_id.clone(),
                        frame_index,
                        distance,
                        phase: video.labels.as_ref().map(|l| l[frame_index]),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            // stable: equal distances keep corpus order
            hits.sort_by(|a, b| a.distance.total_cmp(&b.distance));
            Ok(RetrievalResult { query: q.clone(), hits })
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut agree, mut pairs) = (0usize, 0usize);
    for r in &results {
        let Some(qp) = r.query.phase else { continue };
        for h in r.hits.iter().filter(|h| h.video_id != r.query.video_id) {
            if let Some(hp) = h.phase {
                pairs += 1;
                agree += usize::from(hp == qp);
            }
        }
    }
    Ok(RetrievalReport {
        results,
        agreement_rate: (pairs > 0).then(|| agree as f64 / pairs as f64),
        agreement_pairs: pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::EncoderArch;
    use crate::rng::seeded;

    #[test]
    fn self_retrieval_and_ties() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i) as f64 * 0.1]).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        assert_eq!(nearest_frame(&rows[17], &m).unwrap(), (17, 0.0));

        let mut rows = vec![vec![5.0, 5.0]; 12];
        rows[3] = vec![1.0, 0.0];
        rows[9] = vec![1.0, 0.0];
        let m = Matrix::from_rows(&rows).unwrap();
        assert_eq!(nearest_frame(&[0.0, 0.0], &m).unwrap(), (3, 1.0));

        assert!(nearest_frame(&[0.0], &Matrix::zeros(0, 1)).is_err());
        assert!(nearest_frame(&[0.0], &Matrix::zeros(2, 2)).is_err());
    }

    fn video(id: &str, n: usize, offset: f32, labels: Vec<usize>) -> FrameSequence {
        let features = (0..n * 2).map(|i| i as f32 * 0.1 + offset).collect();
        FrameSequence::new(id, 5.0, 2, features, Some(labels)).unwrap()
    }

    #[test]
    fn report_contains_own_video_at_zero() {
        let arch = EncoderArch {
            input_dim: 2,
            hidden: vec![4],
            embedding_dim: 3,
        };
        let enc = EncoderModel::new(&arch, &mut seeded(5)).unwrap();
        let corpus = [
            video("a", 5, 0.0, vec![0, 0, 1, 1, 1]),
            video("b", 4, 7.0, vec![0, 1, 1, 1]),
        ];
        let q = QueryFrame::from_video("q0", &corpus[1], 2).unwrap();
        let rep = retrieval_report(&enc, &[q], &corpus).unwrap();
        let hits = &rep.results[0].hits;
        assert_eq!(hits.len(), 2);
        assert_eq!((hits[0].video_id.as_str(), hits[0].frame_index, hits[0].distance), ("b", 2, 0.0));
        assert!(hits[1].distance >= hits[0].distance);
        assert_eq!(rep.agreement_pairs, 1);

        let single = retrieval_report(&enc, &[QueryFrame::from_video("q", &corpus[0], 0).unwrap()], &corpus[..1]).unwrap();
        assert_eq!(single.results[0].hits.len(), 1);
        assert_eq!(single.agreement_rate, None);
        assert!(QueryFrame::from_video("bad", &corpus[0], 5).is_err());
    }
}
