use std::fmt;
use std::sync::Arc;

use super::RuntimeError;

/// Dense row-major float64 array. Rank is at least 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NdArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NdArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, RuntimeError> {
        if shape.is_empty() {
            return Err(RuntimeError::new("array rank must be at least 1"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(RuntimeError::new(format!(
                "array of shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(NdArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        NdArray {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }
}

/// A runtime value. Integers and booleans only drive control flow and
/// indexing; all differentiable data is float64.
#[derive(Debug, Clone)]
pub enum Value {
    Scalar(f64),
    Array(Arc<NdArray>),
    Bool(bool),
    Int(i64),
    None,
}

impl PartialEq for Value {
    /// Bitwise comparison of float payloads (so NaN equals NaN with the same bits).
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Scalar(a), Value::Scalar(b)) => a.to_bits() == b.to_bits(),
            (Value::Array(a), Value::Array(b)) => {
                a.shape == b.shape
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::None, Value::None) => true,
            _ => false,
        }
    }
}

impl Value {
    pub fn array(shape: Vec<usize>, data: Vec<f64>) -> Result<Value, RuntimeError> {
        Ok(Value::Array(Arc::new(NdArray::new(shape, data)?)))
    }

    pub fn vector(data: Vec<f64>) -> Value {
        let n = data.len();
        Value::Array(Arc::new(NdArray {
            shape: vec![n],
            data,
        }))
    }

    /// Build from a shape and buffer; an empty shape gives a scalar.
    pub fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Value {
        if shape.is_empty() {
            Value::Scalar(data[0])
        } else {
            Value::Array(Arc::new(NdArray { shape, data }))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Scalar(_) => "scalar",
            Value::Array(_) => "array",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::None => "None",
        }
    }

    /// Shape as seen by broadcasting; numbers are rank 0.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Value::Array(a) => a.shape.clone(),
            _ => Vec::new(),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Scalar(_) | Value::Array(_) | Value::Int(_))
    }

    /// Float view of the data in row-major order.
    pub fn to_f64_vec(&self) -> Result<Vec<f64>, RuntimeError> {
        match self {
            Value::Scalar(v) => Ok(vec![*v]),
            Value::Int(v) => Ok(vec![*v as f64]),
            Value::Array(a) => Ok(a.data.clone()),
            other => Err(RuntimeError::new(format!(
                "expected a number or array, got {}",
                other.kind()
            ))),
        }
    }

    pub fn as_f64(&self) -> Result<f64, RuntimeError> {
        match self {
            Value::Scalar(v) => Ok(*v),
            Value::Int(v) => Ok(*v as f64),
            Value::Array(a) if a.len() == 1 => Ok(a.data[0]),
            other => Err(RuntimeError::new(format!(
                "expected a scalar, got {} of shape {:?}",
                other.kind(),
                other.shape()
            ))),
        }
    }

    pub fn as_int(&self) -> Result<i64, RuntimeError> {
        match self {
            Value::Int(v) => Ok(*v),
            Value::Scalar(v) if v.fract() == 0.0 && v.is_finite() => Ok(*v as i64),
            other => Err(RuntimeError::new(format!(
                "expected an integer, got {} {}",
                other.kind(),
                other
            ))),
        }
    }

    pub fn truthy(&self) -> Result<bool, RuntimeError> {
        match self {
            Value::Bool(b) => Ok(*b),
            Value::Int(v) => Ok(*v != 0),
            Value::Scalar(v) => Ok(*v != 0.0),
            Value::None => Ok(false),
            Value::Array(a) => Err(RuntimeError::new(format!(
                "truth value of an array of shape {:?} is ambiguous",
                a.shape
            ))),
        }
    }

    /// Number of float elements (1 for scalars).
    pub fn size(&self) -> usize {
        match self {
            Value::Array(a) => a.len(),
            _ => 1,
        }
    }

    /// Convert from JSON: numbers, nested lists of numbers, booleans, null.
    /// JSON integers become `Int`, everything else numeric is float.
    pub fn from_json(j: &serde_json::Value) -> Result<Value, RuntimeError> {
        match j {
            serde_json::Value::Null => Ok(Value::None),
            serde_json::Value::Bool(b) => Ok(Value::Bool(*b)),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) if !n.is_f64() => Ok(Value::Int(i)),
                _ => Ok(Value::Scalar(n.as_f64().unwrap_or(f64::NAN))),
            },
            serde_json::Value::Array(_) => {
                let mut shape = Vec::new();
                let mut probe = j;
                while let serde_json::Value::Array(items) = probe {
                    shape.push(items.len());
                    match items.first() {
                        Some(first) => probe = first,
                        None => break,
                    }
                }
                let mut data = Vec::new();
                flatten_json(j, 0, &shape, &mut data)?;
                Value::array(shape, data)
            }
            other => Err(RuntimeError::new(format!("unsupported JSON value {other}"))),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        fn nest(shape: &[usize], data: &[f64]) -> serde_json::Value {
            if shape.len() == 1 {
                return serde_json::Value::Array(data.iter().map(|v| float_json(*v)).collect());
            }
            let step = data.len() / shape[0].max(1);
            serde_json::Value::Array(
                (0..shape[0])
                    .map(|i| nest(&shape[1..], &data[i * step..(i + 1) * step]))
                    .collect(),
            )
        }
        match self {
            Value::Scalar(v) => float_json(*v),
            Value::Int(v) => serde_json::Value::from(*v),
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::None => serde_json::Value::Null,
            Value::Array(a) => nest(&a.shape, &a.data),
        }
    }
}

fn float_json(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or_else(|| serde_json::Value::String(format!("{v}")))
}

fn flatten_json(
    j: &serde_json::Value,
    depth: usize,
    shape: &[usize],
    out: &mut Vec<f64>,
) -> Result<(), RuntimeError> {
    match j {
        serde_json::Value::Array(items) => {
            if depth >= shape.len() || items.len() != shape[depth] {
                return Err(RuntimeError::new("ragged nested list cannot form an array"));
            }
            for it in items {
                flatten_json(it, depth + 1, shape, out)?;
            }
            Ok(())
        }
        serde_json::Value::Number(n) if depth == shape.len() => {
            out.push(n.as_f64().unwrap_or(f64::NAN));
            Ok(())
        }
        _ => Err(RuntimeError::new("arrays may only contain numbers of uniform depth")),
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

/// Result shape of broadcasting `a` against `b` (trailing-axis alignment).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides for reading an array of `shape` as if broadcast to `target`.
/// Broadcast axes get stride 0.
pub fn broadcast_strides(shape: &[usize], target: &[usize]) -> Vec<usize> {
    let offset = target.len() - shape.len();
    let mut strides = vec![0; target.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 && target[i + offset] != 1 {
            0
        } else {
            acc
        };
        acc *= shape[i];
    }
    strides
}

/// Read `data` (of `shape`) expanded to `target`.
pub fn expand_to(data: &[f64], shape: &[usize], target: &[usize]) -> Vec<f64> {
    let n: usize = target.iter().product();
    if shape == target {
        return data.to_vec();
    }
    let strides = broadcast_strides(shape, target);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; target.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for ax in (0..target.len()).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < target[ax] {
                break;
            }
            off -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[4, 3], &[1, 3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shapes(&[3], &[2, 1]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shapes(&[2], &[3]), None);
    }

    #[test]
    fn expansion_tiles_rows_and_columns() {
        let row = expand_to(&[1.0, 2.0, 3.0], &[1, 3], &[2, 3]);
        assert_eq!(row, vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let col = expand_to(&[1.0, 2.0], &[2, 1], &[2, 3]);
        assert_eq!(col, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let s = expand_to(&[5.0], &[], &[2]);
        assert_eq!(s, vec![5.0, 5.0]);
    }

    #[test]
    fn json_conversion() {
        let j: serde_json::Value = serde_json::from_str("[[2.0, 2.0], 1]").unwrap();
        let items = j.as_array().unwrap();
        let x = Value::from_json(&items[0]).unwrap();
        assert_eq!(x.shape(), vec![2]);
        assert_eq!(Value::from_json(&items[1]).unwrap(), Value::Int(1));
        assert_eq!(Value::Scalar(4.0).to_json().to_string(), "4.0");
        let m = Value::array(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.to_json().to_string(), "[[1.0,2.0],[3.0,4.0]]");
        assert!(Value::from_json(&serde_json::json!([[1.0], [1.0, 2.0]])).is_err());
    }
}
