use crate::error::{Error, Result};

/// Numpy-style broadcast of two shapes, aligned from the trailing axis.
pub(crate) fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let nd = a.len().max(b.len());
    let mut out = vec![0; nd];
    for i in 0..nd {
        let da = if i + a.len() >= nd { a[i + a.len() - nd] } else { 1 };
        let db = if i + b.len() >= nd { b[i + b.len() - nd] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(Error::Dimension {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        };
    }
    Ok(out)
}

/// For every element of `out_shape`, the flat offset into a tensor of shape
/// `src` broadcast against it.
pub(crate) fn broadcast_offsets(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let nd = out_shape.len();
    let pad = nd - src.len();
    // row-major strides of src, zeroed on broadcast axes
    let mut strides = vec![0usize; nd];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        strides[i + pad] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    let n: usize = out_shape.iter().product();
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; nd];
    let mut cur = 0usize;
    for _ in 0..n {
        offs.push(cur);
        for ax in (0..nd).rev() {
            idx[ax] += 1;
            cur += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            cur -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    offs
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        st[i] = st[i + 1] * shape[i + 1];
    }
    st
}

/// Splits `shape` around `axis` into (outer, len, inner) element counts.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_trailing_axis() {
        assert_eq!(broadcast_shape("t", &[2, 3], &[3]).unwrap(), vec![2, 3]);
        assert_eq!(broadcast_shape("t", &[4, 1, 3], &[2, 1]).unwrap(), vec![4, 2, 3]);
        assert!(broadcast_shape("t", &[2, 3], &[2]).is_err());
    }

    #[test]
    fn offsets_repeat_on_broadcast_axes() {
        let offs = broadcast_offsets(&[3], &[2, 3]);
        assert_eq!(offs, vec![0, 1, 2, 0, 1, 2]);
        let offs = broadcast_offsets(&[2, 1], &[2, 3]);
        assert_eq!(offs, vec![0, 0, 0, 1, 1, 1]);
        let offs = broadcast_offsets(&[2, 3], &[2, 3]);
        assert_eq!(offs, (0..6).collect::<Vec<_>>());
    }
}
