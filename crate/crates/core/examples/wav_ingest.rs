//! Use a recording from disk as the unknown source. A short chirp is
//! written to a temporary WAV file first so the example is self-contained.

use cci_tdoa::room::{image_method_air, random_geometry, synthesize_observations, RoomConfig};
use cci_tdoa::signal::load_audio_file;
use cci_tdoa::Result;

fn main() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("chirp.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).expect("create wav");
    for k in 0..8000 {
        let t = k as f64 / 16_000.0;
        let v = (2.0 * std::f64::consts::PI * (200.0 + 3000.0 * t) * t).sin();
        w.write_sample((v * 20_000.0) as i16).expect("write sample");
    }
    w.finalize().expect("finish wav");

    let src = load_audio_file(&path)?;
    println!("{}: {} samples at {} Hz", src.label(), src.len(), src.sample_rate());
    let excerpt = src.excerpt(1000, 2048)?;

    let room = RoomConfig::desk();
    let geom = random_geometry(&room, 3, 5)?;
    let air = image_method_air(&room, &geom, room.max_channel_len())?;
    let obs = synthesize_observations(&air, &excerpt)?;
    println!("{} recordings of {} samples", obs.n_mics(), obs.len());
    Ok(())
}
