use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GramKind {
    QQ,
    KK,
    QK,
}

/// Cosine Gramian between two views' token matrices, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gramian {
    pub matrix: Tensor,
    pub kind: GramKind,
    pub layer: usize,
    pub view_t: usize,
    pub view_s: usize,
}

fn normalized_rows(m: &Tensor) -> Vec<f64> {
    let c = m.shape()[1];
    let mut out = m.data().to_vec();
    for row in out.chunks_mut(c) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        } else {
            row.fill(0.0);
        }
    }
    out
}

/// `a·bᵀ/√c` over L2-normalised rows, mapped affinely from
/// `[-1/√c, 1/√c]` to `[0, 1]`. Zero rows act as zero vectors.
pub fn gramian_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::shape("gramian", a.shape(), b.shape()));
    }
    let (ka, kb, c) = (a.shape()[0], b.shape()[0], a.shape()[1]);
    let an = normalized_rows(a);
    let bn = normalized_rows(b);
    let root = (c as f64).sqrt();
    let mut out = vec![0.0; ka * kb];
    for i in 0..ka {
        let ar = &an[i * c..(i + 1) * c];
        for j in 0..kb {
            let br = &bn[j * c..(j + 1) * c];
            let g = ar.iter().zip(br).map(|(x, y)| x * y).sum::<f64>() / root;
            out[i * kb + j] = (g * root + 1.0) / 2.0;
        }
    }
    Ok(Tensor::from_parts(vec![ka, kb], out))
}

pub fn gramian(a: &Tensor, b: &Tensor, kind: GramKind) -> Result<Gramian> {
    Ok(Gramian {
        matrix: gramian_matrix(a, b)?,
        kind,
        layer: 0,
        view_t: 0,
        view_s: 0,
    })
}
