import numpy as np
import pytest
from scipy.io import wavfile


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sine_1s():
    from voxprofile.audio import PIPELINE_RATE, Waveform

    t = np.arange(PIPELINE_RATE) / PIPELINE_RATE
    return Waveform(0.4 * np.sin(2 * np.pi * 440.0 * t), PIPELINE_RATE)


def write_wav(path, samples, rate):
    wavfile.write(path, rate, (np.asarray(samples) * 32767.0).astype(np.int16))


@pytest.fixture
def wav_file_16k(tmp_path):
    t = np.arange(16000) / 16000.0
    path = tmp_path / "tone16k.wav"
    write_wav(path, 0.3 * np.sin(2 * np.pi * 220.0 * t), 16000)
    return path


@pytest.fixture
def wav_file_48k(tmp_path):
    t = np.arange(48000) / 48000.0
    path = tmp_path / "tone48k.wav"
    write_wav(path, 0.3 * np.sin(2 * np.pi * 220.0 * t), 48000)
    return path
