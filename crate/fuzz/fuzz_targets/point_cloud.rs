#![no_main]

use libfuzzer_sys::fuzz_target;
use urbancf::io::{parse_point_cloud, write_point_cloud};

fuzz_target!(|data: &[u8]| {
    let Ok(cloud) = parse_point_cloud(data) else {
        return;
    };
    let mut text = Vec::new();
    write_point_cloud(&cloud, &mut text).unwrap();
    let again = parse_point_cloud(text.as_slice()).expect("written cloud parses");
    assert_eq!(again.points.len(), cloud.points.len());
});
