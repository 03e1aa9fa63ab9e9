use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use super::*;
use crate::embedding::SchemeSpec;
use crate::eval::size_report;
use crate::models::{Gmf, Item2Item, NeuMf};

fn specs() -> Vec<SchemeSpec> {
    let mut specs = vec![
        SchemeSpec::Full,
        SchemeSpec::LowRank { rank: 5 },
        SchemeSpec::ScalarQuantized { bits: 8 },
        SchemeSpec::ScalarQuantized { bits: 3 },
        SchemeSpec::Dpq {
            subspaces: 4,
            centroids: 16,
        },
        SchemeSpec::Dpq {
            subspaces: 8,
            centroids: 2,
        },
    ];
    for variant in [MgqeVariant::SharedVarK, MgqeVariant::UnsharedVarK] {
        specs.push(SchemeSpec::Mgqe {
            variant,
            tier_fractions: vec![0.1],
            centroids: vec![16, 5],
            subspaces: vec![4, 4],
        });
    }
    specs.push(SchemeSpec::Mgqe {
        variant: MgqeVariant::UnsharedVarD,
        tier_fractions: vec![0.25, 0.6],
        centroids: vec![16, 16, 16],
        subspaces: vec![8, 4, 2],
    });
    specs
}

fn frozen(kind: ModelKind, spec: &SchemeSpec, seed: u64) -> AnyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = match kind {
        ModelKind::Gmf => AnyModel::Gmf(Gmf::new(37, 53, 8, spec, &mut rng).unwrap()),
        ModelKind::NeuMf => AnyModel::NeuMf(NeuMf::new(37, 53, 8, spec, &mut rng).unwrap()),
        ModelKind::Item2Item => AnyModel::Item2Item(Item2Item::new(53, 8, spec, &mut rng).unwrap()),
    };
    model.freeze_for_serving().unwrap();
    model
}

#[test]
fn round_trip_is_byte_identical_for_every_scheme() {
    let dir = tempdir().unwrap();
    for kind in [ModelKind::Gmf, ModelKind::NeuMf, ModelKind::Item2Item] {
        for (i, spec) in specs().iter().enumerate() {
            let model = frozen(kind, spec, i as u64);
            let path = dir.path().join(format!("{kind}-{i}.{EXTENSION}"));
            let written = export(&model, &path).unwrap();
            let back = import(&path).unwrap();
            assert_eq!(back.kind(), kind);
            let again = encode(&back).unwrap();
            assert_eq!(again.len() as u64, written, "{kind} {spec}");
            assert_eq!(again, fs::read(&path).unwrap(), "{kind} {spec}");
        }
    }
}

#[test]
fn imported_lookups_match_the_original() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (i, spec) in specs().iter().enumerate() {
        let model = frozen(ModelKind::Gmf, spec, 100 + i as u64);
        let back = decode(&encode(&model).unwrap()).unwrap();
        for (a, b) in model.schemes().iter().zip(back.schemes()) {
            let ids: Vec<usize> = (0..1000).map(|_| rng.random_range(0..a.len())).collect();
            assert_eq!(a.lookup(&ids).unwrap(), b.lookup(&ids).unwrap(), "{spec}");
        }
        let users: Vec<usize> = (0..200).map(|_| rng.random_range(0..37)).collect();
        let items: Vec<usize> = (0..200).map(|_| rng.random_range(0..53)).collect();
        assert_eq!(model.predict(&users, &items).unwrap(), back.predict(&users, &items).unwrap());
    }
}

#[test]
fn packed_bits_agree_with_size_report() {
    for kind in [ModelKind::Gmf, ModelKind::NeuMf, ModelKind::Item2Item] {
        for (i, spec) in specs().iter().enumerate() {
            let model = frozen(kind, spec, 7 + i as u64);
            assert_eq!(
                packed_size_bits(&model).unwrap(),
                size_report(&model).total_packed_bits(),
                "{kind} {spec}"
            );
        }
    }
}

fn item_code_bits(spec: &SchemeSpec, n: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = AnyModel::Item2Item(Item2Item::new(n, 64, spec, &mut rng).unwrap());
    model.freeze_for_serving().unwrap();
    let bytes = encode(&model).unwrap();
    // Skip the 25-byte file header, then the table header up to the code stream.
    let mut input = In { bytes: &bytes, pos: 25 };
    input.u8().unwrap();
    input.u64().unwrap();
    input.u32().unwrap();
    input.u32().unwrap();
    let m = input.u32().unwrap() as usize;
    input.take(8 * (m + 1) + 8 * m + 1 + 4).unwrap();
    input.u64().unwrap()
}

#[test]
fn dpq_code_stream_length() {
    let spec = SchemeSpec::Dpq {
        subspaces: 8,
        centroids: 256,
    };
    assert_eq!(item_code_bits(&spec, 1000), 64_000);
}

#[test]
fn mgqe_code_stream_length() {
    let spec = SchemeSpec::Mgqe {
        variant: MgqeVariant::SharedVarK,
        tier_fractions: vec![0.1],
        centroids: vec![256, 64],
        subspaces: vec![8, 8],
    };
    // 100 head items at 8 bits, 900 tail items at 6 bits, 8 codes each.
    assert_eq!(item_code_bits(&spec, 1000), 49_600);
}

#[test]
fn two_centroids_use_one_bit_per_code() {
    let spec = SchemeSpec::Dpq {
        subspaces: 8,
        centroids: 2,
    };
    assert_eq!(item_code_bits(&spec, 10), 80);
}

#[test]
fn unfrozen_models_are_refused() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = SchemeSpec::Dpq {
        subspaces: 4,
        centroids: 16,
    };
    let model = AnyModel::Gmf(Gmf::new(5, 5, 8, &spec, &mut rng).unwrap());
    assert!(matches!(encode(&model), Err(Error::NotFrozen)));
}

#[test]
fn corruption_is_detected() {
    let model = frozen(ModelKind::Gmf, &specs()[4], 1);
    let bytes = encode(&model).unwrap();

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(decode(&flipped), Err(Error::Checksum { .. })));

    assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
    assert!(matches!(decode(&bytes[..2]), Err(Error::Truncated { .. })));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode(&magic), Err(Error::BadMagic)));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(decode(&version), Err(Error::UnsupportedVersion(9))));

    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode(&extra), Err(Error::Malformed(_))));
}

#[test]
fn out_of_range_code_is_malformed() {
    // A valid checksum over a stream whose code exceeds K.
    let spec = SchemeSpec::Dpq {
        subspaces: 8,
        centroids: 5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = AnyModel::Item2Item(Item2Item::new(4, 8, &spec, &mut rng).unwrap());
    model.freeze_for_serving().unwrap();
    let mut bytes = encode(&model).unwrap();
    // Code stream starts after the 25-byte header and the 75-byte table header.
    let first_code = 25 + 1 + 8 + 4 + 4 + 4 + 16 + 4 + 4 + 1 + 4 + 8;
    bytes[first_code] |= 0x07;
    let body = bytes.len() - 8;
    let sum = checksum(&bytes[..body]);
    bytes[body..].copy_from_slice(&sum.to_le_bytes());
    assert!(matches!(decode(&bytes), Err(Error::Malformed(_))));
}
