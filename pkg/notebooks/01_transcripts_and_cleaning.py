"""Walkthrough: from a raw meeting to cleaned question instances.

Run with ``python3 notebooks/01_transcripts_and_cleaning.py``.
"""

from meeqa_toolkit import preprocess as P
from meeqa_toolkit import transcript as T

# A meeting is a list of speaker turns plus annotated questions. Answer spans
# are inclusive (utterance, first word, last word) triples, 1-based utterances.
meeting = T.Meeting(
    "budget",
    (
        T.Utterance(1, "CHAIR", "Um, we will now, uh, hear the the budget report."),
        T.Utterance(2, "CLERK", "[Inaudible] The report is ready."),
        T.Utterance(3, "CHAIR", "Uh, who prepared it? Take your time."),
        T.Utterance(4, "DIRECTOR", "Um, my office prepared it, uh, last month."),
    ),
    (T.Question("q1", 3, "who prepared it?", (
        T.AnswerAnnotation("a", ((4, 1, 3),)),
        T.AnswerAnnotation("b", ((4, 1, 4),)),
        T.AnswerAnnotation("c", (), True),
    )),),
)

# Each question becomes an instance with a window of k utterances before and
# l after. The question utterance is split into prefix, question and suffix.
(inst,) = T.extract_question_instances(meeting, k=1, l=60)
print("prefix:", repr(inst.prefix.text), "| question:", inst.question_text, "| suffix:", repr(inst.suffix.text))
print("answerable by majority:", T.derive_answerability_label(inst.annotations))

# Cleaning removes bracketed stage comments, fillers, immediate repetitions and
# stray symbols, and rewrites every answer span to the new word positions.
(clean,), report = P.preprocess_meetings([meeting])
for u in clean.utterances:
    print(f"  {u.index} {u.speaker}: {u.text}")
print("answer of judge a after cleaning:", clean.questions[0].annotations[0].spans)
print("report:", report.to_dict())

# Running the pipeline again changes nothing.
(again,), second = P.preprocess_meetings([clean])
assert again == clean and second.removed_fillers == 0
print("idempotent: yes")
