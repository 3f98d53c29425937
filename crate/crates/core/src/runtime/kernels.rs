//! Float64 kernels with trailing-axis broadcasting, plus the gradient
//! helpers used by generated code (`unbroadcast`, `add_grad`, `unreduce`...).

use std::sync::Arc;

use super::value::{broadcast_shapes, broadcast_strides, expand_to, NdArray, Value};
use super::RuntimeError;
use crate::ast::BinOp;

fn shape_error(what: &str, a: &[usize], b: &[usize]) -> RuntimeError {
    RuntimeError::new(format!("{what}: shapes {a:?} and {b:?} are not broadcast-compatible"))
}

/// Element-wise arithmetic with broadcasting.
pub fn arith(op: BinOp, a: &Value, b: &Value) -> Result<Value, RuntimeError> {
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        return match op {
            BinOp::Add => Ok(Value::Int(x.wrapping_add(*y))),
            BinOp::Sub => Ok(Value::Int(x.wrapping_sub(*y))),
            BinOp::Mul => Ok(Value::Int(x.wrapping_mul(*y))),
            BinOp::Div => Ok(Value::Scalar(*x as f64 / *y as f64)),
            _ => unreachable!("arith called with {op:?}"),
        };
    }
    let f = match op {
        BinOp::Add => |x: f64, y: f64| x + y,
        BinOp::Sub => |x: f64, y: f64| x - y,
        BinOp::Mul => |x: f64, y: f64| x * y,
        BinOp::Div => |x: f64, y: f64| x / y,
        _ => unreachable!("arith called with {op:?}"),
    };
    zip_with(a, b, op.symbol(), f)
}

pub fn zip_with(
    a: &Value,
    b: &Value,
    what: &str,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Value, RuntimeError> {
    if !a.is_numeric() || !b.is_numeric() {
        return Err(RuntimeError::new(format!(
            "operator {what} needs numbers, got {} and {}",
            a.kind(),
            b.kind()
        )));
    }
    match (a, b) {
        (Value::Array(x), Value::Array(y)) if x.shape == y.shape => {
            let data = x.data.iter().zip(&y.data).map(|(p, q)| f(*p, *q)).collect();
            return Ok(Value::from_parts(x.shape.clone(), data));
        }
        (Value::Array(x), s) if !matches!(s, Value::Array(_)) => {
            let q = s.as_f64()?;
            let data = x.data.iter().map(|p| f(*p, q)).collect();
            return Ok(Value::from_parts(x.shape.clone(), data));
        }
        (s, Value::Array(y)) if !matches!(s, Value::Array(_)) => {
            let p = s.as_f64()?;
            let data = y.data.iter().map(|q| f(p, *q)).collect();
            return Ok(Value::from_parts(y.shape.clone(), data));
        }
        (Value::Array(_), Value::Array(_)) => {}
        _ => return Ok(Value::Scalar(f(a.as_f64()?, b.as_f64()?))),
    }
    let (sa, sb) = (a.shape(), b.shape());
    let out = broadcast_shapes(&sa, &sb).ok_or_else(|| shape_error(what, &sa, &sb))?;
    let xa = expand_to(&a.to_f64_vec()?, &sa, &out);
    let xb = expand_to(&b.to_f64_vec()?, &sb, &out);
    let data = xa.iter().zip(&xb).map(|(p, q)| f(*p, *q)).collect();
    Ok(Value::from_parts(out, data))
}

pub fn compare(op: BinOp, a: &Value, b: &Value) -> Result<Value, RuntimeError> {
    if let (Value::Bool(x), Value::Bool(y)) = (a, b) {
        return match op {
            BinOp::Eq => Ok(Value::Bool(x == y)),
            BinOp::Ne => Ok(Value::Bool(x != y)),
            _ => Err(RuntimeError::new("booleans only support == and !=")),
        };
    }
    if matches!(a, Value::Array(_)) || matches!(b, Value::Array(_)) {
        return Err(RuntimeError::new(format!(
            "comparison {} needs scalars, got shapes {:?} and {:?}",
            op.symbol(),
            a.shape(),
            b.shape()
        )));
    }
    let (x, y) = (a.as_f64()?, b.as_f64()?);
    Ok(Value::Bool(match op {
        BinOp::Lt => x < y,
        BinOp::Gt => x > y,
        BinOp::Le => x <= y,
        BinOp::Ge => x >= y,
        BinOp::Eq => x == y,
        BinOp::Ne => x != y,
        _ => unreachable!(),
    }))
}

pub fn map(v: &Value, f: impl Fn(f64) -> f64) -> Result<Value, RuntimeError> {
    match v {
        Value::Array(a) => Ok(Value::from_parts(
            a.shape.clone(),
            a.data.iter().map(|x| f(*x)).collect(),
        )),
        other => Ok(Value::Scalar(f(other.as_f64()?))),
    }
}

pub fn neg(v: &Value) -> Result<Value, RuntimeError> {
    match v {
        Value::Int(i) => Ok(Value::Int(-i)),
        other => map(other, |x| -x),
    }
}

/// Normalize a possibly negative axis against `rank`.
fn resolve_axis(axis: &Value, rank: usize) -> Result<Option<usize>, RuntimeError> {
    match axis {
        Value::None => Ok(None),
        other => {
            let a = other.as_int()?;
            let r = rank as i64;
            let idx = if a < 0 { a + r } else { a };
            if idx < 0 || idx >= r {
                return Err(RuntimeError::new(format!(
                    "axis {a} out of range for rank {rank}"
                )));
            }
            Ok(Some(idx as usize))
        }
    }
}

/// Sum over one axis (or all axes when `axis` is None).
pub fn sum(x: &Value, axis: &Value, keepdims: &Value) -> Result<Value, RuntimeError> {
    let keep = keepdims.truthy()?;
    let shape = x.shape();
    let data = x.to_f64_vec()?;
    match resolve_axis(axis, shape.len().max(1))? {
        None => {
            let total: f64 = data.iter().sum();
            if keep && !shape.is_empty() {
                Ok(Value::from_parts(vec![1; shape.len()], vec![total]))
            } else {
                Ok(Value::Scalar(total))
            }
        }
        Some(_) if shape.is_empty() => Ok(Value::Scalar(data[0])),
        Some(ax) => {
            let outer: usize = shape[..ax].iter().product();
            let n = shape[ax];
            let inner: usize = shape[ax + 1..].iter().product();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..n {
                    let base = (o * n + k) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += data[base + i];
                    }
                }
            }
            let mut out_shape = shape.clone();
            if keep {
                out_shape[ax] = 1;
            } else {
                out_shape.remove(ax);
            }
            Ok(Value::from_parts(out_shape, out))
        }
    }
}

fn reduced_count(x: &Value, axis: &Value) -> Result<usize, RuntimeError> {
    let shape = x.shape();
    Ok(match resolve_axis(axis, shape.len().max(1))? {
        None => x.size(),
        Some(_) if shape.is_empty() => 1,
        Some(ax) => shape[ax],
    })
}

pub fn mean(x: &Value, axis: &Value, keepdims: &Value) -> Result<Value, RuntimeError> {
    let n = reduced_count(x, axis)? as f64;
    let s = sum(x, axis, keepdims)?;
    map(&s, |v| v / n)
}

/// Broadcast a reduction's adjoint back to the operand's shape.
pub fn unreduce(g: &Value, like: &Value, axis: &Value, keepdims: &Value) -> Result<Value, RuntimeError> {
    let target = like.shape();
    let mut gshape = g.shape();
    if let Some(ax) = resolve_axis(axis, target.len().max(1))? {
        if !keepdims.truthy()? && !target.is_empty() {
            gshape.insert(ax, 1);
        }
    }
    let data = g.to_f64_vec()?;
    if broadcast_shapes(&gshape, &target).as_deref() != Some(&target[..]) {
        return Err(shape_error("unreduce", &gshape, &target));
    }
    Ok(Value::from_parts(target.clone(), expand_to(&data, &gshape, &target)))
}

pub fn unreduce_mean(
    g: &Value,
    like: &Value,
    axis: &Value,
    keepdims: &Value,
) -> Result<Value, RuntimeError> {
    let n = reduced_count(like, axis)? as f64;
    let spread = unreduce(g, like, axis, keepdims)?;
    map(&spread, |v| v / n)
}

/// Undo broadcasting: sum `y` over the axes broadcasting created or
/// stretched so the result has exactly the shape of `like`. A `y` that is
/// itself smaller than `like` is expanded instead.
pub fn unbroadcast(y: &Value, like: &Value) -> Result<Value, RuntimeError> {
    let target = like.shape();
    let ys = y.shape();
    if ys == target {
        return Ok(match y {
            Value::Int(i) => Value::Scalar(*i as f64),
            other => other.clone(),
        });
    }
    let data = y.to_f64_vec()?;
    if broadcast_shapes(&ys, &target).as_deref() == Some(&target[..]) {
        return Ok(Value::from_parts(target.clone(), expand_to(&data, &ys, &target)));
    }
    if broadcast_shapes(&ys, &target).as_deref() != Some(&ys[..]) {
        return Err(shape_error("unbroadcast", &ys, &target));
    }
    let strides = broadcast_strides(&target, &ys);
    let n_out: usize = target.iter().product();
    let mut out = vec![0.0; n_out.max(1)];
    let mut idx = vec![0usize; ys.len()];
    let mut off = 0usize;
    for v in &data {
        out[off] += v;
        for ax in (0..ys.len()).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < ys[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Ok(Value::from_parts(target, out))
}

/// Gradient accumulation; the caller handles the uninitialized case.
pub fn add_grad(a: &Value, b: &Value) -> Result<Value, RuntimeError> {
    zip_with(a, b, "add_grad", |x, y| x + y)
}

pub fn zeros_like(x: &Value) -> Value {
    match x {
        Value::Array(a) => Value::Array(Arc::new(NdArray::zeros(a.shape.clone()))),
        _ => Value::Scalar(0.0),
    }
}

fn as_matrix(v: &Value) -> Result<(Vec<usize>, Vec<f64>), RuntimeError> {
    Ok((v.shape(), v.to_f64_vec()?))
}

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// Matrix and vector products for operands of rank at most 2.
pub fn dot(a: &Value, b: &Value) -> Result<Value, RuntimeError> {
    let (sa, da) = as_matrix(a)?;
    let (sb, db) = as_matrix(b)?;
    let mismatch = || {
        RuntimeError::new(format!(
            "dot: inner dimensions differ for shapes {sa:?} and {sb:?}"
        ))
    };
    match (sa.len(), sb.len()) {
        (0, _) | (_, 0) => arith(BinOp::Mul, a, b),
        (1, 1) => {
            if sa[0] != sb[0] {
                return Err(mismatch());
            }
            Ok(Value::Scalar(da.iter().zip(&db).map(|(x, y)| x * y).sum()))
        }
        (2, 2) => {
            if sa[1] != sb[0] {
                return Err(mismatch());
            }
            Ok(Value::from_parts(
                vec![sa[0], sb[1]],
                matmul(&da, &db, sa[0], sa[1], sb[1]),
            ))
        }
        (1, 2) => {
            if sa[0] != sb[0] {
                return Err(mismatch());
            }
            Ok(Value::from_parts(vec![sb[1]], matmul(&da, &db, 1, sa[0], sb[1])))
        }
        (2, 1) => {
            if sa[1] != sb[0] {
                return Err(mismatch());
            }
            Ok(Value::from_parts(vec![sa[0]], matmul(&da, &db, sa[0], sa[1], 1)))
        }
        _ => Err(RuntimeError::new(format!(
            "dot supports operands of rank at most 2, got shapes {sa:?} and {sb:?}"
        ))),
    }
}

pub fn transpose(a: &Value) -> Result<Value, RuntimeError> {
    match a {
        Value::Array(x) if x.rank() == 2 => {
            let (m, n) = (x.shape[0], x.shape[1]);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = x.data[i * n + j];
                }
            }
            Ok(Value::from_parts(vec![n, m], out))
        }
        Value::Array(x) if x.rank() > 2 => Err(RuntimeError::new(format!(
            "transpose supports rank at most 2, got {:?}",
            x.shape
        ))),
        other => Ok(other.clone()),
    }
}

fn outer(u: &[f64], v: &[f64]) -> Value {
    let mut out = Vec::with_capacity(u.len() * v.len());
    for x in u {
        for y in v {
            out.push(x * y);
        }
    }
    Value::from_parts(vec![u.len(), v.len()], out)
}

/// Adjoint of `dot(a, b)` with respect to `a`, given the result adjoint `g`.
pub fn grad_dot_lhs(g: &Value, a: &Value, b: &Value) -> Result<Value, RuntimeError> {
    match (a.shape().len(), b.shape().len()) {
        (0, _) | (_, 0) => unbroadcast(&arith(BinOp::Mul, g, b)?, a),
        (1, 1) => arith(BinOp::Mul, g, b),
        (2, 2) => dot(g, &transpose(b)?),
        (2, 1) => Ok(outer(&g.to_f64_vec()?, &b.to_f64_vec()?)),
        (1, 2) => dot(b, g),
        _ => Err(rank_error(a, b)),
    }
}

fn rank_error(a: &Value, b: &Value) -> RuntimeError {
    RuntimeError::new(format!(
        "dot supports operands of rank at most 2, got shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

/// Adjoint of `dot(a, b)` with respect to `b`.
pub fn grad_dot_rhs(g: &Value, a: &Value, b: &Value) -> Result<Value, RuntimeError> {
    match (a.shape().len(), b.shape().len()) {
        (0, _) | (_, 0) => unbroadcast(&arith(BinOp::Mul, g, a)?, b),
        (1, 1) => arith(BinOp::Mul, g, a),
        (2, 2) | (2, 1) => dot(&transpose(a)?, g),
        (1, 2) => Ok(outer(&a.to_f64_vec()?, &g.to_f64_vec()?)),
        _ => Err(rank_error(a, b)),
    }
}

/// Flat offset of a single-element index into `shape`.
pub fn element_offset(shape: &[usize], index: &Value) -> Result<usize, RuntimeError> {
    let parts: Vec<i64> = match index {
        Value::Array(a) => a.data.iter().map(|v| *v as i64).collect(),
        other => vec![other.as_int()?],
    };
    if parts.len() != shape.len() {
        return Err(RuntimeError::new(format!(
            "index with {} components into array of shape {:?}; only single elements can be indexed",
            parts.len(),
            shape
        )));
    }
    let mut off = 0usize;
    for (p, n) in parts.iter().zip(shape) {
        let i = if *p < 0 { *p + *n as i64 } else { *p };
        if i < 0 || i >= *n as i64 {
            return Err(RuntimeError::new(format!(
                "index {p} out of bounds for axis of length {n}"
            )));
        }
        off = off * n + i as usize;
    }
    Ok(off)
}

pub fn index(a: &Value, idx: &Value) -> Result<Value, RuntimeError> {
    match a {
        Value::Array(x) => Ok(Value::Scalar(x.data[element_offset(&x.shape, idx)?])),
        other => Err(RuntimeError::new(format!("cannot index a {}", other.kind()))),
    }
}

/// Adjoint of `a[idx]`: zeros shaped like `a` with `g` at `idx`.
pub fn unindex(g: &Value, like: &Value, idx: &Value) -> Result<Value, RuntimeError> {
    match like {
        Value::Array(x) => {
            let mut z = NdArray::zeros(x.shape.clone());
            z.data[element_offset(&x.shape, idx)?] = g.as_f64()?;
            Ok(Value::Array(Arc::new(z)))
        }
        other => Err(RuntimeError::new(format!("cannot index a {}", other.kind()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> Value {
        Value::array(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn unbroadcast_to_scalar_sums_everything() {
        let y = arr(&[2, 3], &[1.0; 6]);
        assert_eq!(unbroadcast(&y, &Value::Scalar(0.0)).unwrap(), Value::Scalar(6.0));
    }

    #[test]
    fn unbroadcast_keeps_equal_shapes() {
        let y = arr(&[2], &[1.0, 2.0]);
        assert_eq!(unbroadcast(&y, &arr(&[2], &[0.0, 0.0])).unwrap(), y);
    }

    #[test]
    fn unbroadcast_column_sums() {
        let y = arr(&[4, 3], &(0..12).map(|v| v as f64).collect::<Vec<_>>());
        let r = unbroadcast(&y, &arr(&[1, 3], &[0.0; 3])).unwrap();
        assert_eq!(r, arr(&[1, 3], &[18.0, 22.0, 26.0]));
        assert!(unbroadcast(&y, &arr(&[2], &[0.0; 2])).is_err());
    }

    #[test]
    fn add_grad_elementwise() {
        let r = add_grad(&arr(&[2], &[1.0, 2.0]), &arr(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(r, arr(&[2], &[4.0, 6.0]));
        assert_eq!(add_grad(&Value::Scalar(2.0), &Value::Scalar(2.0)).unwrap(), Value::Scalar(4.0));
        assert!(add_grad(&arr(&[2], &[1.0, 2.0]), &arr(&[3], &[1.0; 3])).is_err());
    }

    #[test]
    fn logsumexp_of_zeros() {
        let x = arr(&[2], &[0.0, 0.0]);
        let s = sum(&map(&x, f64::exp).unwrap(), &Value::Int(-1), &Value::Bool(false)).unwrap();
        let l = map(&s, f64::ln).unwrap();
        assert!((l.as_f64().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dot_identity_and_mismatch() {
        let i2 = arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let a = arr(&[2, 2], &[0.3, -1.2, 2.5, 0.7]);
        assert_eq!(dot(&i2, &a).unwrap(), a);
        let err = dot(&a, &arr(&[3, 1], &[1.0; 3])).unwrap_err();
        assert!(err.message.contains("[2, 2]") && err.message.contains("[3, 1]"));
    }

    #[test]
    fn sum_axis_and_keepdims() {
        let x = arr(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(sum(&x, &Value::Int(-1), &Value::Bool(false)).unwrap(), arr(&[2], &[6.0, 15.0]));
        assert_eq!(sum(&x, &Value::Int(0), &Value::Bool(true)).unwrap(), arr(&[1, 3], &[5.0, 7.0, 9.0]));
        assert_eq!(sum(&x, &Value::None, &Value::Bool(false)).unwrap(), Value::Scalar(21.0));
        assert_eq!(mean(&x, &Value::None, &Value::Bool(false)).unwrap(), Value::Scalar(3.5));
        let g = arr(&[2], &[1.0, 2.0]);
        assert_eq!(
            unreduce(&g, &x, &Value::Int(-1), &Value::Bool(false)).unwrap(),
            arr(&[2, 3], &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0])
        );
    }

    #[test]
    fn indexing() {
        let x = arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(index(&x, &arr(&[2], &[1.0, 0.0])).unwrap(), Value::Scalar(3.0));
        let v = arr(&[3], &[1.0, 2.0, 3.0]);
        assert_eq!(index(&v, &Value::Int(-1)).unwrap(), Value::Scalar(3.0));
        assert!(index(&v, &Value::Int(3)).is_err());
        assert_eq!(unindex(&Value::Scalar(5.0), &v, &Value::Int(1)).unwrap(), arr(&[3], &[0.0, 5.0, 0.0]));
    }
}
