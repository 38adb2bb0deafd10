#![no_main]

use agz_core::evaluation::*;
use libfuzzer_sys::fuzz_target;

fn round_trip<T: CsvRow>(data: &[u8]) {
    if let Ok(rows) = read_csv::<T, _>(data) {
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).expect("rows serialize");
        let back: Vec<T> = read_csv(buf.as_slice()).expect("written table parses");
        // NaN never equals itself; compare the re-serialized text instead.
        let mut again = Vec::new();
        write_csv(&back, &mut again).expect("rows serialize");
        assert_eq!(buf, again);
    }
}

fuzz_target!(|data: &[u8]| {
    round_trip::<VCurveRow>(data);
    round_trip::<PolicyRow>(data);
    round_trip::<TrajectoryRow>(data);
    round_trip::<TrainingCurveRow>(data);
    round_trip::<TrainingLogRow>(data);
});
