#![no_main]

use libfuzzer_sys::fuzz_target;
use pctnews::config::ConfigFile;
use pctnews::data::{Ar1Config, SynthConfig};
use pctnews::lstm::LstmConfig;
use pctnews::model::ModelConfig;
use pctnews::training::TrainConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(file) = ConfigFile::parse(text) else { return };
    let mut f = file.clone();
    if f.model_config(ModelConfig::micro()).is_ok() && f.train_config(TrainConfig::default()).is_ok() {
        let _ = f.finish();
    }
    let _ = file.clone().lstm_config(LstmConfig::default());
    let _ = file.clone().synth_config(SynthConfig::default());
    let _ = file.clone().ar1_config(Ar1Config::default());
});
