"""Walkthrough: turning an instance into model input.

Run with ``python3 notebooks/02_representation.py``.
"""

from meeqa_toolkit import representation as R
from meeqa_toolkit.transcript import AnswerAnnotation, Meeting, Question, Utterance, extract_question_instances

meeting = Meeting(
    "demo",
    (
        Utterance(1, "MS. RIVERA", "The parking study is on the agenda."),
        Utterance(2, "MR. OKAFOR", "Okay. Thank you."),
        Utterance(3, "MS. RIVERA", "Thank you. Who is presenting the study?"),
        Utterance(4, "MS. RIVERA", "I believe staff will."),
        Utterance(5, "MR. OKAFOR", "Yes, the planning office."),
    ),
    (Question("q", 3, "Who is presenting the study?", (AnswerAnnotation("j", ((5, 1, 3),)),)),),
)
(inst,) = extract_question_instances(meeting, k=2, l=60)
inst = R.normalize_speakers(inst)  # real names become SPEAKER_0, SPEAKER_1, ...

# The text before the question (S_B) and after it (S_A) depends on how
# speakers are marked and how many earlier utterances are kept.
for label, mode in [
    ("original, no context", R.RepresentationMode(R.SpeakerMode.ORIGINAL, 0)),
    ("switch, no context", R.RepresentationMode(R.SpeakerMode.SWITCH, 0)),
    ("switch, one before", R.RepresentationMode(R.SpeakerMode.SWITCH, 1)),
    ("switch, marker '&'", R.RepresentationMode(R.SpeakerMode.SWITCH, 1, "&")),
]:
    s_b, s_a = R.render_sequence(inst, mode)
    print(f"{label:>22}: {s_b} [SEP] {s_a}")

# Encoding assembles [CLS] S_B [SEP] S_A [SEP], pads to l_max and maps the
# gold words onto token positions inside S_A.
mode = R.RepresentationMode()
vocab = R.Vocabulary.build(R.instance_texts([inst], mode))
enc = R.encode_instance(inst, mode, vocab, l_max=48, annotation=inst.annotations[0])
length = int(enc.attention_mask.sum())
tokens = [vocab.itos[i] for i in enc.token_ids[:length]]
print("tokens:", tokens)
print("gold token span:", enc.y_s, enc.y_e, "->", tokens[enc.y_s:enc.y_e + 1])
print("back to words:", sorted(R.tokens_to_word_indices(enc, (enc.y_s, enc.y_e))))
