//! Canonical JSON: object keys sorted by byte order, no insignificant
//! whitespace, numbers in shortest round-trip form.
//!
//! The writer walks a `serde_json::Value` itself rather than relying on the
//! map ordering of whatever `serde_json` features happen to be enabled.

use serde::Serialize;
use serde_json::Value;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CanonicalError {
    #[error("value cannot be represented: {0}")]
    Unrepresentable(String),
    #[error("non-finite number: {0}")]
    NonFinite(String),
}

/// Serializes `value` to canonical JSON bytes.
pub fn to_canonical_vec<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let v =
        serde_json::to_value(value).map_err(|e| CanonicalError::Unrepresentable(e.to_string()))?;
    let mut out = Vec::with_capacity(128);
    write_value(&v, &mut out);
    Ok(out)
}

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String, CanonicalError> {
    // The writer only emits valid UTF-8.
    to_canonical_vec(value).map(|b| String::from_utf8(b).expect("canonical JSON is UTF-8"))
}

/// Writes an already-built value canonically.
pub fn write_value(v: &Value, out: &mut Vec<u8>) {
    match v {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => out.extend_from_slice(n.to_string().as_bytes()),
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out);
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_unstable_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            out.push(b'{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(k, out);
                out.push(b':');
                write_value(&map[k], out);
            }
            out.push(b'}');
        }
    }
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    // serde_json's string escaping is already minimal and deterministic.
    out.extend_from_slice(
        serde_json::to_string(s)
            .expect("strings always serialize")
            .as_bytes(),
    );
}

/// Rejects NaN/∞ anywhere inside a serializable value. `serde_json` would
/// otherwise silently turn them into `null`.
pub fn check_finite<T: Serialize + ?Sized>(value: &T) -> Result<(), CanonicalError> {
    value
        .serialize(finite::Probe)
        .map_err(|e| CanonicalError::NonFinite(e.to_string()))
}

mod finite {
    //! A serializer that produces nothing and fails on the first non-finite float.

    use serde::ser::{self, Serialize};

    pub struct Probe;

    #[derive(Debug)]
    pub struct Error(String);

    impl std::fmt::Display for Error {
        fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
            f.write_str(&self.0)
        }
    }

    impl std::error::Error for Error {}

    impl ser::Error for Error {
        fn custom<T: std::fmt::Display>(msg: T) -> Self {
            Error(msg.to_string())
        }
    }

    macro_rules! accept {
        ($($m:ident: $t:ty),*) => {
            $(fn $m(self, _v: $t) -> Result<(), Error> { Ok(()) })*
        };
    }

    impl ser::Serializer for Probe {
        type Ok = ();
        type Error = Error;
        type SerializeSeq = Probe;
        type SerializeTuple = Probe;
        type SerializeTupleStruct = Probe;
        type SerializeTupleVariant = Probe;
        type SerializeMap = Probe;
        type SerializeStruct = Probe;
        type SerializeStructVariant = Probe;

        accept!(serialize_bool: bool, serialize_i8: i8, serialize_i16: i16, serialize_i32: i32,
            serialize_i64: i64, serialize_u8: u8, serialize_u16: u16, serialize_u32: u32,
            serialize_u64: u64, serialize_char: char, serialize_str: &str, serialize_bytes: &[u8]);

        fn serialize_f32(self, v: f32) -> Result<(), Error> {
            self.serialize_f64(v as f64)
        }
        fn serialize_f64(self, v: f64) -> Result<(), Error> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error(format!("non-finite float {v}")))
            }
        }
        fn serialize_none(self) -> Result<(), Error> {
            Ok(())
        }
        fn serialize_some<T: ?Sized + Serialize>(self, value: &T) -> Result<(), Error> {
            value.serialize(self)
        }
        fn serialize_unit(self) -> Result<(), Error> {
            Ok(())
        }
        fn serialize_unit_struct(self, _name: &'static str) -> Result<(), Error> {
            Ok(())
        }
        fn serialize_unit_variant(
            self,
            _name: &'static str,
            _idx: u32,
            _variant: &'static str,
        ) -> Result<(), Error> {
            Ok(())
        }
        fn serialize_newtype_struct<T: ?Sized + Serialize>(
            self,
            _name: &'static str,
            value: &T,
        ) -> Result<(), Error> {
            value.serialize(self)
        }
        fn serialize_newtype_variant<T: ?Sized + Serialize>(
            self,
            _name: &'static str,
            _idx: u32,
            _variant: &'static str,
            value: &T,
        ) -> Result<(), Error> {
            value.serialize(self)
        }
        fn serialize_seq(self, _len: Option<usize>) -> Result<Probe, Error> {
            Ok(Probe)
        }
        fn serialize_tuple(self, _len: usize) -> Result<Probe, Error> {
            Ok(Probe)
        }
        fn serialize_tuple_struct(self, _name: &'static str, _len: usize) -> Result<Probe, Error> {
            Ok(Probe)
        }
        fn serialize_tuple_variant(
            self,
            _name: &'static str,
            _idx: u32,
            _variant: &'static str,
            _len: usize,
        ) -> Result<Probe, Error> {
            Ok(Probe)
        }
        fn serialize_map(self, _len: Option<usize>) -> Result<Probe, Error> {
            Ok(Probe)
        }
        fn serialize_struct(self, _name: &'static str, _len: usize) -> Result<Probe, Error> {
            Ok(Probe)
        }
        fn serialize_struct_variant(
            self,
            _name: &'static str,
            _idx: u32,
            _variant: &'static str,
            _len: usize,
        ) -> Result<Probe, Error> {
            Ok(Probe)
        }
    }

    macro_rules! compound {
        ($tr:ident, $m:ident) => {
            impl ser::$tr for Probe {
                type Ok = ();
                type Error = Error;
                fn $m<T: ?Sized + Serialize>(&mut self, value: &T) -> Result<(), Error> {
                    value.serialize(Probe)
                }
                fn end(self) -> Result<(), Error> {
                    Ok(())
                }
            }
        };
    }
    compound!(SerializeSeq, serialize_element);
    compound!(SerializeTuple, serialize_element);
    compound!(SerializeTupleStruct, serialize_field);
    compound!(SerializeTupleVariant, serialize_field);

    impl ser::SerializeMap for Probe {
        type Ok = ();
        type Error = Error;
        fn serialize_key<T: ?Sized + Serialize>(&mut self, key: &T) -> Result<(), Error> {
            key.serialize(Probe)
        }
        fn serialize_value<T: ?Sized + Serialize>(&mut self, value: &T) -> Result<(), Error> {
            value.serialize(Probe)
        }
        fn end(self) -> Result<(), Error> {
            Ok(())
        }
    }

    impl ser::SerializeStruct for Probe {
        type Ok = ();
        type Error = Error;
        fn serialize_field<T: ?Sized + Serialize>(
            &mut self,
            _key: &'static str,
            value: &T,
        ) -> Result<(), Error> {
            value.serialize(Probe)
        }
        fn end(self) -> Result<(), Error> {
            Ok(())
        }
    }

    impl ser::SerializeStructVariant for Probe {
        type Ok = ();
        type Error = Error;
        fn serialize_field<T: ?Sized + Serialize>(
            &mut self,
            _key: &'static str,
            value: &T,
        ) -> Result<(), Error> {
            value.serialize(Probe)
        }
        fn end(self) -> Result<(), Error> {
            Ok(())
        }
    }
}
