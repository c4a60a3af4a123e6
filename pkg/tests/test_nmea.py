import datetime

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsync import nmea
from tsync.nmea import (BadChecksum, GnssFix, MalformedField, MissingField,
                        NoTimeField, SentenceKind, SerialDeliveryModel,
                        Truncated, checksum, extract_fix, generate,
                        parse_sentence)


def xor_oracle(payload: str) -> str:
    acc = 0
    for ch in payload.encode("ascii"):
        acc ^= ch
    return f"{acc:02X}"


class TestChecksum:
    def test_empty_payload(self):
        assert checksum("") == "00"

    def test_known_payload_matches_oracle(self):
        assert checksum("GPGGA,123519") == xor_oracle("GPGGA,123519")

    @given(st.text(st.characters(min_codepoint=32, max_codepoint=126,
                                 exclude_characters="$*"), max_size=60))
    def test_matches_oracle(self, payload):
        assert checksum(payload) == xor_oracle(payload)

    def test_repeated_sentence_same_checksum(self):
        assert checksum("GPRMC,1") == checksum("GPRMC,1")

    def test_delimiters_rejected(self):
        with pytest.raises(ValueError):
            checksum("GP$GA")


def make_line(payload: str) -> str:
    return f"${payload}*{xor_oracle(payload)}"


RMC_PAYLOAD = "GPRMC,083559.000,A,,,,,,,160321,,"
GGA_PAYLOAD = "GNGGA,083559.000,,,,,1,07,,,M,,M"
ZDA_PAYLOAD = "GPZDA,083559.000,16,03,2021,00,00"


class TestParse:
    def test_well_formed_rmc(self):
        s = parse_sentence(make_line(RMC_PAYLOAD) + "\r\n")
        assert s.kind is SentenceKind.RMC
        assert s.talker == "GP"
        assert s.fields[1] == "A"

    def test_lf_only_accepted(self):
        assert parse_sentence(make_line(GGA_PAYLOAD) + "\n").kind is SentenceKind.GGA

    def test_checksum_flip_detected(self):
        line = make_line(RMC_PAYLOAD)
        bad = line[:-1] + ("0" if line[-1] != "0" else "1")
        with pytest.raises(BadChecksum):
            parse_sentence(bad)

    @given(st.data())
    @settings(max_examples=60)
    def test_any_payload_byte_flip_rejected(self, data):
        line = make_line(RMC_PAYLOAD)
        idx = data.draw(st.integers(1, len(RMC_PAYLOAD)))
        flipped = chr(ord(line[idx]) ^ 0x01)
        if flipped in "$*\r\n":
            return
        mutated = line[:idx] + flipped + line[idx + 1:]
        with pytest.raises((BadChecksum, MalformedField, Truncated)):
            parse_sentence(mutated)

    def test_truncated_inputs(self):
        with pytest.raises(Truncated):
            parse_sentence("GPGGA,1*33")
        with pytest.raises(Truncated):
            parse_sentence("$GPGGA,1")
        with pytest.raises(Truncated):
            parse_sentence("$GPGGA,1*3")

    def test_missing_trailing_fields(self):
        with pytest.raises(MalformedField):
            parse_sentence(make_line("GPRMC,083559.000,A"))

    def test_unknown_type_is_other(self):
        s = parse_sentence(make_line("GPGSV,1,1,00"))
        assert s.kind is SentenceKind.OTHER
        assert s.type_code == "GSV"


class TestExtract:
    def test_rmc_active_status(self):
        fix = extract_fix(parse_sentence(make_line(RMC_PAYLOAD)))
        assert fix.fix_valid
        assert fix.date == datetime.date(2021, 3, 16)
        assert fix.tod_ns == (8 * 3600 + 35 * 60 + 59) * 10**9

    def test_rmc_void_status(self):
        payload = RMC_PAYLOAD.replace(",A,", ",V,")
        assert not extract_fix(parse_sentence(make_line(payload))).fix_valid

    def test_gga_satellite_count(self):
        fix = extract_fix(parse_sentence(make_line(GGA_PAYLOAD)),
                          last_date=datetime.date(2021, 3, 16))
        assert fix.nsat == 7
        assert fix.fix_valid
        assert fix.date == datetime.date(2021, 3, 16)

    def test_gga_quality_zero_invalid(self):
        payload = GGA_PAYLOAD.replace(",1,07,", ",0,07,")
        fix = extract_fix(parse_sentence(make_line(payload)))
        assert not fix.fix_valid
        assert fix.nsat == 7

    def test_zda(self):
        fix = extract_fix(parse_sentence(make_line(ZDA_PAYLOAD)))
        assert fix.date == datetime.date(2021, 3, 16)
        assert fix.fix_valid

    def test_empty_time_field(self):
        payload = "GPRMC,,V,,,,,,,160321,,"
        with pytest.raises(NoTimeField):
            extract_fix(parse_sentence(make_line(payload)))

    def test_wrong_kind_rejected(self):
        s = parse_sentence(make_line("GPGSV,1,1,00"))
        with pytest.raises(ValueError):
            extract_fix(s)


MASKS = st.sampled_from([
    frozenset({"GPS"}), frozenset({"GLONASS"}), frozenset({"BEIDOU"}),
    frozenset({"GALILEO"}),
    frozenset({"GPS", "GLONASS", "BEIDOU", "GALILEO"}),
])
TODS = st.integers(0, 86_399_999).map(lambda ms: ms * 10**6)
DATES = st.dates(datetime.date(2000, 1, 1), datetime.date(2099, 12, 31))


class TestGenerateRoundTrip:
    @given(TODS, DATES, st.booleans(), MASKS)
    @settings(max_examples=80)
    def test_rmc(self, tod, date, valid, mask):
        fix = GnssFix(tod, date, valid, None, mask)
        back = extract_fix(parse_sentence(generate(fix, SentenceKind.RMC)))
        assert back == fix

    @given(TODS, DATES, st.integers(1, 32), st.booleans(), MASKS)
    @settings(max_examples=80)
    def test_gga(self, tod, date, nsat, valid, mask):
        fix = GnssFix(tod, date, valid, nsat, mask)
        back = extract_fix(parse_sentence(generate(fix, SentenceKind.GGA)),
                           last_date=date)
        assert back == fix

    @given(TODS, DATES, MASKS)
    @settings(max_examples=80)
    def test_zda(self, tod, date, mask):
        fix = GnssFix(tod, date, True, None, mask)
        back = extract_fix(parse_sentence(generate(fix, SentenceKind.ZDA)))
        assert back == fix

    def test_invalid_fix_renders_void_status(self):
        fix = GnssFix(0, datetime.date(2021, 1, 1), False, None,
                      frozenset({"GPS"}))
        assert ",V," in generate(fix, SentenceKind.RMC)

    def test_nsat_formatting(self):
        fix = GnssFix(0, None, True, 12, frozenset({"GPS"}))
        assert ",12," in generate(fix, SentenceKind.GGA)

    def test_missing_fields(self):
        fix = GnssFix(0, None, False, None, frozenset({"GPS"}))
        with pytest.raises(MissingField):
            generate(fix, SentenceKind.RMC)
        with pytest.raises(MissingField):
            generate(fix, SentenceKind.GGA)


class TestFixInvariants:
    def test_valid_fix_needs_time(self):
        with pytest.raises(ValueError):
            GnssFix(None, None, True, 5)

    def test_zero_sats_cannot_be_valid(self):
        with pytest.raises(ValueError):
            GnssFix(0, None, True, 0)

    def test_absolute_second(self):
        fix = GnssFix(3 * 10**9, datetime.date(2021, 1, 2), True, None)
        got = nmea.absolute_second_ns(fix, datetime.date(2021, 1, 1))
        assert got == (86_400 + 3) * 10**9


class TestSerialDelivery:
    def test_zero_jitter_is_exact_base_latency(self):
        model = SerialDeliveryModel(base_latency_ms=80.0, jitter_ms=0.0)
        rng = np.random.default_rng(1)
        assert all(model.delivery_delay_ns(rng) == 80_000_000
                   for _ in range(10))

    def test_jitter_bounded(self):
        model = SerialDeliveryModel(base_latency_ms=80.0, jitter_ms=10.0)
        rng = np.random.default_rng(2)
        draws = [model.delivery_delay_ns(rng) for _ in range(500)]
        assert all(70_000_000 <= d <= 90_000_000 for d in draws)

    def test_drop(self):
        model = SerialDeliveryModel(drop_prob=0.5)
        rng = np.random.default_rng(3)
        draws = [model.delivery_delay_ns(rng) for _ in range(200)]
        assert draws.count(None) > 50

    def test_validation(self):
        with pytest.raises(ValueError):
            SerialDeliveryModel(base_latency_ms=-1)
        with pytest.raises(ValueError):
            SerialDeliveryModel(drop_prob=1.0)
