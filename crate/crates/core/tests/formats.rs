//! Binary layouts shared with the model service, checked byte by byte.

use ontoprobe::prompt::SoftCheckpoint;
use ontoprobe::pseudoword::{EmbeddingTable, PseudowordError};

fn le(v: u32) -> [u8; 4] {
    v.to_le_bytes()
}

fn table_bytes(rows: &[[f32; 3]], mask: u32) -> Vec<u8> {
    let mut b = b"OPEM".to_vec();
    for v in [1, rows.len() as u32, 3, mask] {
        b.extend(le(v));
    }
    for r in rows {
        for x in r {
            b.extend(x.to_le_bytes());
        }
    }
    b
}

#[test]
fn embedding_table_layout() {
    let rows = [[0.0, 1.0, -2.5], [3.0, 0.25, 1e-3], [-1.0, -1.0, 7.0]];
    let bytes = table_bytes(&rows, 2);
    let t = EmbeddingTable::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!((t.dimension, t.mask_index, t.rows.len()), (3, 2, 3));
    assert_eq!(t.mask(), &[-1.0, -1.0, 7.0]);
    let mut out = Vec::new();
    t.write_to(&mut out).unwrap();
    assert_eq!(out, bytes);
}

#[test]
fn embedding_table_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.bin");
    let t = EmbeddingTable::new(vec![vec![0.5; 16], vec![-0.5; 16]], 1).unwrap();
    t.save(&path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 20 + 2 * 16 * 4);
    assert_eq!(EmbeddingTable::load(&path).unwrap(), t);
}

#[test]
fn embedding_table_rejects_corruption() {
    let good = table_bytes(&[[0.0; 3], [1.0; 3]], 0);

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(
        EmbeddingTable::read_from(&mut magic.as_slice()),
        Err(PseudowordError::Format(_))
    ));

    let mut version = good.clone();
    version[4] = 2;
    assert!(EmbeddingTable::read_from(&mut version.as_slice()).is_err());

    let truncated = &good[..good.len() - 2];
    assert!(matches!(
        EmbeddingTable::read_from(&mut &truncated[..]),
        Err(PseudowordError::Io(_))
    ));

    let bad_mask = table_bytes(&[[0.0; 3], [1.0; 3]], 5);
    assert!(EmbeddingTable::read_from(&mut bad_mask.as_slice()).is_err());

    let nan = table_bytes(&[[0.0; 3], [f32::NAN, 0.0, 0.0]], 0);
    assert!(EmbeddingTable::read_from(&mut nan.as_slice()).is_err());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend(le(s.len() as u32));
    b.extend(s.as_bytes());
}

#[test]
fn soft_checkpoint_layout() {
    let mut bytes = b"OPSK".to_vec();
    for v in [1, 2, 2] {
        bytes.extend(le(v));
    }
    put_str(&mut bytes, r#"{"init":"normal"}"#);
    put_str(&mut bytes, "TP.s1");
    bytes.extend(0.5f32.to_le_bytes());
    bytes.extend((-1.5f32).to_le_bytes());
    put_str(&mut bytes, "conj.s4");
    bytes.extend(2.0f32.to_le_bytes());
    bytes.extend(0.0f32.to_le_bytes());

    let ck = SoftCheckpoint::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(ck.dimension, 2);
    assert_eq!(ck.metadata, r#"{"init":"normal"}"#);
    assert_eq!(ck.vectors.keys().collect::<Vec<_>>(), ["TP.s1", "conj.s4"]);
    assert_eq!(ck.vectors["conj.s4"], vec![2.0, 0.0]);

    let mut out = Vec::new();
    ck.write_to(&mut out).unwrap();
    assert_eq!(out, bytes);

    let mut bad = bytes.clone();
    bad[3] = b'?';
    assert!(SoftCheckpoint::read_from(&mut bad.as_slice()).is_err());
    assert!(SoftCheckpoint::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn soft_checkpoint_rejects_ragged_vectors() {
    let mut ck = SoftCheckpoint {
        dimension: 3,
        ..Default::default()
    };
    ck.vectors.insert("x.s1".into(), vec![1.0, 2.0]);
    assert!(ck.write_to(&mut Vec::new()).is_err());
}
