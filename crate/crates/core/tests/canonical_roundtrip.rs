use dhlink_core::schema::{validate_instance, DataSchema, FieldKind, FieldSpec};
use dhlink_core::value::{canonical_decode, canonical_encode, Map, Value};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_kind(rng: &mut ChaCha8Rng, depth: u32) -> FieldKind {
    let leaf = [
        FieldKind::String,
        FieldKind::Integer,
        FieldKind::Float,
        FieldKind::Boolean,
        FieldKind::Timestamp,
        FieldKind::GeoPoint,
    ];
    if depth >= 2 || rng.gen_bool(0.7) {
        return leaf.choose(rng).unwrap().clone();
    }
    if rng.gen_bool(0.5) {
        FieldKind::Array(Box::new(random_kind(rng, depth + 1)))
    } else {
        FieldKind::Record(random_fields(rng, depth + 1))
    }
}

fn random_fields(rng: &mut ChaCha8Rng, depth: u32) -> Vec<FieldSpec> {
    (0..rng.gen_range(0..6))
        .map(|i| FieldSpec::new(format!("f{i}_{}", rng.gen_range(0..100)), random_kind(rng, depth), rng.gen_bool(0.5)))
        .collect()
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    let pool = ['a', 'Z', '0', ' ', '"', '\\', '\n', 'é', '😀', '\u{1}', '/'];
    (0..rng.gen_range(0..12)).map(|_| *pool.choose(rng).unwrap()).collect()
}

fn random_value(rng: &mut ChaCha8Rng, kind: &FieldKind) -> Value {
    match kind {
        FieldKind::String => Value::String(random_string(rng)),
        FieldKind::Integer => Value::from(rng.gen::<i64>()),
        FieldKind::Float => {
            let x: f64 = match rng.gen_range(0..3) {
                0 => rng.gen_range(-1e6..1e6),
                1 => f64::from_bits(rng.gen::<u64>() & !(0x7ffu64 << 52) | (rng.gen_range(1..2046u64) << 52)),
                _ => rng.gen_range(-100i32..100) as f64,
            };
            Value::from(x)
        }
        FieldKind::Boolean => Value::Bool(rng.gen()),
        FieldKind::Timestamp => Value::from(rng.gen_range(0..4_102_444_800_000i64)),
        FieldKind::GeoPoint => {
            let mut m = Map::new();
            m.insert("lat".into(), Value::from(rng.gen_range(-90.0..=90.0)));
            m.insert("lon".into(), Value::from(rng.gen_range(-180.0..=180.0)));
            Value::Object(m)
        }
        FieldKind::Array(inner) => Value::Array((0..rng.gen_range(0..4)).map(|_| random_value(rng, inner)).collect()),
        FieldKind::Record(fields) => record(rng, fields),
    }
}

fn record(rng: &mut ChaCha8Rng, fields: &[FieldSpec]) -> Value {
    let mut m = Map::new();
    for f in fields {
        if f.required || rng.gen_bool(0.5) {
            m.insert(f.name.clone(), random_value(rng, &f.kind));
        }
    }
    Value::Object(m)
}

#[test]
fn schema_valid_values_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let mut checked = 0;
    while checked < 1000 {
        let mut fields = random_fields(&mut rng, 0);
        fields.sort_by(|a, b| a.name.cmp(&b.name));
        fields.dedup_by(|a, b| a.name == b.name);
        let schema = DataSchema::new("Random", 1, fields);
        schema.check().unwrap();
        let value = record(&mut rng, &schema.fields);
        assert!(validate_instance(&schema, &value).ok, "generator produced an invalid value");

        let bytes = canonical_encode(&value).unwrap();
        let back = canonical_decode(&bytes).unwrap();
        assert_eq!(back, value);
        // Injective on valid values: re-encoding is byte-identical.
        assert_eq!(canonical_encode(&back).unwrap(), bytes);
        checked += 1;
    }
}

#[test]
fn canonical_bytes_have_no_whitespace_and_sorted_keys() {
    let v: Value = serde_json::from_str(r#"{ "zeta": [1, 2.5], "alpha": {"b": true, "a": "x y"} }"#).unwrap();
    let bytes = canonical_encode(&v).unwrap();
    assert_eq!(std::str::from_utf8(&bytes).unwrap(), r#"{"alpha":{"a":"x y","b":true},"zeta":[1,2.5]}"#);
}
