"""Text-side models: lexicon, speaker-aware durations, FA-to-UA mapping."""
