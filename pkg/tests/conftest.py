import pytest

from meeqa_toolkit.transcript import AnswerAnnotation, Meeting, Question, Utterance

U_Q2 = ("And so this is a discussion that will continue. So unless I hear a screaming objection, "
        "I ask that we move onto the next item on the agenda.")
U_Q1 = "Okay. Thank you."
U_Q = ("Thank you very much. The next item on the agenda is considering and acting on the change "
       "of address notification to diversify investment advisors. Who is going to speak on that?")
U_A1 = "Mr. Jeffress, I suspect this will be a short."
QUESTION = "Who is going to speak on that?"


def mckay_meeting(annotations=None) -> Meeting:
    if annotations is None:
        annotations = (AnswerAnnotation("j1", ((4, 0, 8),)),)
    return Meeting(
        "mckay",
        (
            Utterance(1, "CHAIRMAN McKAY", U_Q2),
            Utterance(2, "MR. POLGAR", U_Q1),
            Utterance(3, "CHAIRMAN McKAY", U_Q),
            Utterance(4, "CHAIRMAN McKAY", U_A1),
        ),
        (Question("mckay-q", 3, QUESTION, tuple(annotations)),),
    )


@pytest.fixture
def meeting():
    return mckay_meeting()


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
