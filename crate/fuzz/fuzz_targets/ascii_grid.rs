#![no_main]

use libfuzzer_sys::fuzz_target;
use urbancf::io::{export_ascii_grid, import_ascii_grid};

fuzz_target!(|data: &[u8]| {
    let Ok(grid) = import_ascii_grid(data) else {
        return;
    };
    assert_eq!(grid.values.len(), grid.width * grid.height);
    let mut text = Vec::new();
    export_ascii_grid(&grid, &mut text).unwrap();
    let again = import_ascii_grid(text.as_slice()).expect("exported grid parses");
    assert_eq!((again.width, again.height), (grid.width, grid.height));
});
