//! Shape arithmetic: row-major strides and NumPy-style trailing-axis
//! broadcasting. Kept separate from the ops so the rules are testable on
//! their own.

/// Total element count of a shape (empty shape = rank-0 scalar = 1 element).
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a contiguous layout.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Broadcast two shapes with trailing-axis alignment: dims are compared from
/// the right and must be equal or 1. Returns the broadcast shape, or `None`
/// if incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Strides for reading a tensor of shape `shape` as if broadcast to `out`:
/// aligned right, with stride 0 on broadcast (size-1 or missing) dims.
/// Caller must have verified compatibility.
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides_of(shape);
    let offset = out.len() - shape.len();
    let mut s = vec![0usize; out.len()];
    for i in 0..shape.len() {
        s[offset + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    s
}

/// Whether `inner` equals the trailing dims of `outer` with only size-1 or
/// missing leading dims — the case where a broadcast read reduces to
/// `index % numel(inner)`.
pub fn is_suffix_shape(inner: &[usize], outer: &[usize]) -> bool {
    if inner.len() > outer.len() {
        // Leading dims of `inner` beyond `outer`'s rank must all be 1.
        let extra = inner.len() - outer.len();
        if inner[..extra].iter().any(|&d| d != 1) {
            return false;
        }
        return is_suffix_shape(&inner[extra..], outer);
    }
    let offset = outer.len() - inner.len();
    for i in (0..inner.len()).rev() {
        if inner[i] == outer[offset + i] {
            continue;
        }
        // First mismatch (scanning right to left): modular indexing still
        // works only if this dim and everything left of it broadcast away.
        return inner[..=i].iter().all(|&d| d == 1);
    }
    true
}

/// Step an n-d counter in row-major order. Returns false on wraparound.
pub fn increment_index(idx: &mut [usize], shape: &[usize]) -> bool {
    for i in (0..shape.len()).rev() {
        idx[i] += 1;
        if idx[i] < shape[i] {
            return true;
        }
        idx[i] = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_row_major() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_of(&[]), Vec::<usize>::new());
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[3, 1], &[1, 4]), Some(vec![3, 4]));
        assert_eq!(broadcast_shapes(&[5, 4], &[4]), Some(vec![5, 4]));
        assert_eq!(broadcast_shapes(&[5, 4], &[]), Some(vec![5, 4]));
        assert_eq!(broadcast_shapes(&[2, 3], &[3, 2]), None);
        assert_eq!(broadcast_shapes(&[2], &[3]), None);
    }

    #[test]
    fn suffix_detection() {
        assert!(is_suffix_shape(&[4], &[3, 4]));
        assert!(is_suffix_shape(&[1, 4], &[3, 4]));
        assert!(is_suffix_shape(&[3, 4], &[3, 4]));
        assert!(is_suffix_shape(&[], &[3, 4]));
        assert!(!is_suffix_shape(&[3, 1], &[3, 4]));
        assert!(!is_suffix_shape(&[2, 4], &[3, 4]));
        assert!(!is_suffix_shape(&[2, 1, 4], &[2, 3, 4]));
        assert!(is_suffix_shape(&[1, 1, 4], &[2, 3, 4]));
    }
}
