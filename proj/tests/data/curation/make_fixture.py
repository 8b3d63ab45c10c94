"""Regenerates the curation fixture media (PCM16 mono WAV at 4 kHz) and annotation files."""
import json
import wave

import numpy as np

RATE = 4000
VIDEOS = {"kitchen_a": 20.0, "kitchen_b": 15.0, "social_c": 10.0}
# Impacts: (video, time in s, amplitude); everything else is low background noise, except a
# silent stretch in kitchen_a.
IMPACTS = [("kitchen_a", 1.2, 0.6), ("kitchen_a", 3.5, 0.4), ("kitchen_a", 5.1, 0.3),
           ("kitchen_b", 2.4, 0.5), ("kitchen_b", 7.1, 0.3), ("kitchen_b", 10.3, 0.7),
           ("social_c", 1.4, 0.5), ("social_c", 4.5, 0.4)]
SILENT = {"kitchen_a": (14.0, 16.0)}

EVENTS = [
    ("kitchen_a", 1.0, 1.8, None, "metal/glass"),
    ("kitchen_a", 3.2, 4.0, None, "plastic/paper"),
    ("kitchen_a", 5.0, 5.5, None, "speech"),
    ("kitchen_a", 14.5, 15.5, None, "metal/glass"),
    ("kitchen_a", 19.5, 21.0, None, "metal/glass"),
    ("kitchen_b", 2.0, 3.1, None, "wood-only"),
    ("kitchen_b", 7.0, 7.4, None, "music"),
    ("kitchen_b", 10.0, 10.9, None, "metal/glass"),
    ("social_c", 1.0, 2.0, "social", "metal/glass"),
    ("social_c", 4.0, 5.0, "cooking", "plastic/paper"),
    ("kitchen_b", 9.0, 8.0, None, "metal/glass"),
]


def track(name, duration, rng):
    n = int(round(duration * RATE))
    t = np.arange(n) / RATE
    x = 0.01 * rng.standard_normal(n)
    for video, at, amp in IMPACTS:
        if video != name:
            continue
        env = np.where(t >= at, np.exp(-(t - at) * 12.0), 0.0)
        x += amp * env * np.sin(2 * np.pi * (300 + 400 * amp) * (t - at))
    if name in SILENT:
        lo, hi = SILENT[name]
        x[int(lo * RATE):int(hi * RATE)] = 0.0
    return np.clip(x, -1, 1)


def main():
    rng = np.random.default_rng(2024)
    for name, duration in VIDEOS.items():
        pcm = (track(name, duration, rng) * 32767).astype("<i2")
        with wave.open(f"media/{name}.wav", "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(RATE)
            w.writeframes(pcm.tobytes())
    labels = {}
    with open("events.jsonl", "w") as f:
        for i, (video, start, end, scenario, label) in enumerate(EVENTS):
            e = {"video_id": video, "video_duration": VIDEOS[video], "start": start, "end": end}
            if scenario:
                e["scenario"] = scenario
            f.write(json.dumps(e) + "\n")
            labels[f"{video}#{i:05d}"] = label
    with open("labels.json", "w") as f:
        json.dump(labels, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
