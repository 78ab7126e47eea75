use lead_core::synthetic::SyntheticSpec;
use lead_core::{read_feature_file, write_feature_file, Error, FeatureSet};
use sha2::{Digest, Sha256};

fn digest(bytes: &[u8]) -> Vec<u8> {
    Sha256::digest(bytes).to_vec()
}

#[test]
fn large_file_round_trips_byte_identical() {
    let fs = SyntheticSpec::new(10_000, 2048, 10, 3).generate("resnet50-like", 1.0, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.leadfeat");
    write_feature_file(&fs, &path).unwrap();
    let on_disk = std::fs::read(&path).unwrap();
    assert_eq!(on_disk.len(), 40 + 10_000 * 2048 * 4 + 10_000 * 4 + 2 + "resnet50-like".len());

    let back = read_feature_file(&path).unwrap();
    assert_eq!(back, fs);
    let again = dir.path().join("again.leadfeat");
    write_feature_file(&back, &again).unwrap();
    assert_eq!(digest(&on_disk), digest(&std::fs::read(&again).unwrap()));
}

#[test]
fn truncated_file_is_rejected() {
    let fs = SyntheticSpec::new(20, 4, 2, 0).generate("t", 1.0, 0).unwrap();
    let bytes = fs.to_bytes();
    for cut in [0, 7, 39, 40, bytes.len() - 1] {
        assert!(FeatureSet::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(FeatureSet::from_bytes(&wrong), Err(Error::BadMagic)));
}

#[test]
fn missing_file_is_io_error() {
    let err = read_feature_file("/nonexistent/nowhere.leadfeat").unwrap_err();
    assert_eq!(err.kind(), "Io");
    assert!(err.is_input_error());
}
