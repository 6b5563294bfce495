//! A writer thread appends frames at 100 fps while the main thread polls the
//! buffer without locks and checks that it sees every frame exactly once.

use std::time::Duration;

use artistream::ema::{EmaFrame, Space, EMA_DIM};
use artistream::transport::shm::{ShmReader, ShmWriter};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("frames");
    let mut writer = ShmWriter::create(&path, 5 << 20, Space::Millimeters)?;
    let reader = ShmReader::open(&path)?;
    println!("{:?}", reader.header());

    let total = 200u64;
    let producer = std::thread::spawn(move || {
        for seq in 0..total {
            let f = EmaFrame::new(seq, [seq as f64 * 0.01; EMA_DIM], Space::Millimeters, true);
            writer.write(&f).expect("capacity");
            std::thread::sleep(Duration::from_millis(10));
        }
    });

    let mut seen = 0u64;
    let mut polls = 0;
    while seen < total {
        for f in reader.poll(seen) {
            assert_eq!(f.seq, seen, "gap or duplicate");
            seen += 1;
        }
        polls += 1;
        std::thread::sleep(Duration::from_millis(3));
    }
    producer.join().unwrap();
    println!("read {seen} frames in order over {polls} polls");
    Ok(())
}
