//! Sample a desk-sized room, build each microphone's impulse response with
//! the image method and print the ground-truth TDOAs.

use cci_tdoa::room::{
    ground_truth_tdoas, image_method_air, random_geometry, trim_common_support, RoomConfig,
};
use cci_tdoa::Result;

fn main() -> Result<()> {
    let room = RoomConfig::desk();
    let geom = random_geometry(&room, 4, 42)?;
    println!("source at {:.2?}", geom.source_pos);
    for (i, m) in geom.mic_pos.iter().enumerate() {
        println!("mic {i} at {m:.2?}");
    }

    let air = image_method_air(&room, &geom, room.max_channel_len())?;
    let (trimmed, lead) = trim_common_support(&air)?;
    println!(
        "{} taps per channel, {} after removing a common delay of {lead}",
        air.channel_len(),
        trimmed.channel_len()
    );
    for (i, h) in trimmed.channels.iter().enumerate() {
        let taps: Vec<String> = h
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(k, v)| format!("{k}:{v:.3}"))
            .collect();
        println!("h{i}: {}", taps.join(" "));
    }
    print!("TDOAs (samples)\n{}", ground_truth_tdoas(&trimmed)?.to_csv());
    Ok(())
}
