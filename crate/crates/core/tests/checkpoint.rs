use mspe::checkpoint::{Checkpoint, FORMAT_VERSION};
use mspe::error::Error;
use mspe::tensor::SeededRng;
use proptest::prelude::*;

fn random_checkpoint(seed: u64, shapes: &[[usize; 4]]) -> Checkpoint {
    let mut r = SeededRng::new(seed);
    let mut ck = Checkpoint::new(serde_json::json!({ "seed": seed, "tag": "x" }));
    for (k, &s) in shapes.iter().enumerate() {
        let mut t = r.gaussian_tensor(s);
        // Values that a lossy encoding would disturb.
        if let Some(v) = t.data_mut().first_mut() {
            *v = f32::MIN_POSITIVE / 3.0;
        }
        ck.push(format!("p{k}"), "param", t);
    }
    ck
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn save_and_load_are_bit_exact(seed in any::<u64>(),
                                   shapes in prop::collection::vec(prop::array::uniform4(1usize..5), 0..5)) {
        let ck = random_checkpoint(seed, &shapes);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        for (a, b) in ck.entries.iter().zip(&back.entries) {
            let bits = |t: &mspe::tensor::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_files_never_panic(seed in 0u64..100, cut in 0usize..200) {
        let bytes = random_checkpoint(seed, &[[1, 2, 3, 4]]).to_bytes().unwrap();
        let cut = cut.min(bytes.len() - 1);
        prop_assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn file_round_trip_and_version_message() {
    let dir = std::env::temp_dir().join(format!("mspe-ck-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("a.mspe");
    let ck = random_checkpoint(3, &[[2, 3, 4, 5], [1, 1, 1, 1]]);
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    let mut bytes = ck.to_bytes().unwrap();
    bytes[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(matches!(err, Error::Version { found, expected } if found == FORMAT_VERSION + 1 && expected == FORMAT_VERSION));
    let msg = err.to_string();
    assert!(msg.contains(&FORMAT_VERSION.to_string()) && msg.contains(&(FORMAT_VERSION + 1).to_string()), "{msg}");
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Format { offset: 0, .. })));
    assert!(Checkpoint::load(&dir.join("missing.mspe")).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
