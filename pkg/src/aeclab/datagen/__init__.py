from .corpus import (
    CHANNELS, SCENARIOS, GenConfig, MixtureExample, active_power, far_end_and_echo,
    load_example, make_corpus, mix_example, ratio_db, read_manifest, render_example,
    sample_row, scenario_counts, synth_echo_path, write_corpus, write_manifest,
)
from .rir import RoomSpec, generate_rir, image_sources, random_room
from .sources import SourcePool, synth_music, synth_room_noise, synth_speech

__all__ = [
    "CHANNELS", "SCENARIOS", "GenConfig", "MixtureExample", "active_power", "far_end_and_echo",
    "load_example", "make_corpus", "mix_example", "ratio_db", "read_manifest", "render_example",
    "sample_row", "scenario_counts", "synth_echo_path", "write_corpus", "write_manifest",
    "RoomSpec", "generate_rir", "image_sources", "random_room",
    "SourcePool", "synth_music", "synth_room_noise", "synth_speech",
]
