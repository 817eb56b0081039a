import pytest

from taskbot.gateway import GenerationTimeout
from taskbot.qa import (
    ANSWER_MODES,
    QUESTION_TYPES,
    BudgetTooSmall,
    GroundingResult,
    NotGrounded,
    QAAnswer,
    QAContext,
    answer_question,
    assemble_context,
    classify_question,
    ground_span,
    locate_span,
    qa_prompt_variables,
    rank_steps,
)
from taskbot.textutil import ws_token_count

from conftest import make_task, scripted


class TestRankSteps:
    def test_orders_by_overlap_then_index(self):
        task = make_task(
            steps=("mix the flour.", "rest the dough.", "bake the galette until golden.")
        )
        ranked = rank_steps("how long do i bake the galette", task.steps)
        assert ranked[0][0] == 3
        assert [idx for idx, _ in ranked] == [3, 1, 2]
        assert ranked[0][1] > ranked[1][1] >= ranked[2][1]

    def test_ties_break_by_index(self):
        task = make_task(steps=("stir well.", "stir well.", "stir well."))
        ranked = rank_steps("stir", task.steps)
        assert [idx for idx, _ in ranked] == [1, 2, 3]
        assert len({score for _, score in ranked}) == 1

    def test_no_overlap_scores_zero(self):
        task = make_task(steps=("chop onions.",))
        assert rank_steps("galaxy brain", task.steps) == [(1, 0.0)]


# the small task used across the context tests:
#   Title block            -> 3 ws tokens
#   |Description: block    -> 5 ws tokens
#   mandatory = 3 + 5 + 8 scaffold = 16
MANDATORY = 16


class TestAssembleContext:
    def task(self, **kwargs):
        return make_task(**kwargs)

    def test_exact_layout_with_everything_included(self):
        context = assemble_context(
            self.task(),
            history=[("user", "hi"), ("system", "hello!")],
            question="what do i do",
            token_budget=1000,
        )
        assert context.serialized_text == (
            "Title:\ntest task"
            "\n\n|Description:\n a task for tests."
            "\n\n|Ingredients:\n1 cup flour"
            "\n\n|Steps:\nstep one.;\nstep two."
            "\n\n|History:\nuser: hi\nsystem: hello!"
        )
        assert context.included_step_indices == (1, 2)
        assert context.ingredients_included
        assert context.history_window == ("user: hi", "system: hello!")
        assert context.token_count == ws_token_count(context.serialized_text)
        assert context.token_count <= 1000

    def test_budget_too_small_threshold_is_sharp(self):
        with pytest.raises(BudgetTooSmall) as exc_info:
            assemble_context(self.task(), [], "q", token_budget=MANDATORY - 1)
        assert exc_info.value.needed == MANDATORY
        assert exc_info.value.budget == MANDATORY - 1
        context = assemble_context(self.task(), [], "q", token_budget=MANDATORY)
        assert context.serialized_text.startswith("Title:\ntest task")

    def test_nonpositive_budget_rejected(self):
        with pytest.raises(ValueError):
            assemble_context(self.task(), [], "q", token_budget=0)

    def test_ingredients_are_all_or_nothing(self):
        task = self.task(
            requirements=(
                ("flour", "1 cup"),
                ("a very long ingredient name that costs many tokens", "3 heaped spoons"),
            )
        )
        # enough for the mandatory part plus a little, not the full ingredient list
        context = assemble_context(task, [], "q", token_budget=MANDATORY + 4)
        assert context.ingredients_block == ""
        assert not context.ingredients_included
        assert "Ingredients" not in context.serialized_text
        roomy = assemble_context(task, [], "q", token_budget=1000)
        assert "1 cup flour" in roomy.ingredients_block
        assert "3 heaped spoons a very long ingredient name" in roomy.ingredients_block

    def test_steps_admitted_in_rank_order_rendered_ascending(self):
        task = self.task(
            steps=(
                "mix the flour.",
                "rest the dough.",
                "bake the galette until it is deep golden brown.",
            ),
            requirements=(),
        )
        question = "how long do i bake the galette"
        # budget fits exactly the mandatory blocks plus the top-ranked step
        budget = ws_token_count(
            "Title:\ntest task\n\n|Description:\n a task for tests."
            "\n\n|Steps:\nbake the galette until it is deep golden brown."
        )
        context = assemble_context(task, [], question, token_budget=budget)
        assert context.included_step_indices == (3,)
        assert context.steps_block == "|Steps:\nbake the galette until it is deep golden brown."

    def test_step_admission_stops_at_first_overflow(self):
        # the top-ranked step is too big; a later, smaller one would fit but
        # admission stops at the first step that breaks the budget
        task = self.task(
            steps=(
                "knead and fold the sourdough levain slowly while it proofs overnight.",
                "bake it.",
            ),
            requirements=(),
        )
        question = "how do i knead and fold the sourdough levain"
        budget = MANDATORY + 3
        context = assemble_context(task, [], question, token_budget=budget)
        assert rank_steps(question, task.steps)[0][0] == 1
        assert context.included_step_indices == ()
        assert context.steps_block == ""

    def test_history_keeps_last_four_and_drops_oldest_first(self):
        history = [(f"user", f"turn {i}") for i in range(1, 7)]
        roomy = assemble_context(self.task(), history, "q", token_budget=1000)
        assert roomy.history_window == (
            "user: turn 3",
            "user: turn 4",
            "user: turn 5",
            "user: turn 6",
        )
        # shave the budget until only the newest line fits
        tight_budget = ws_token_count(
            "Title:\ntest task\n\n|Description:\n a task for tests."
            "\n\n|Ingredients:\n1 cup flour"
            "\n\n|Steps:\nstep one.;\nstep two."
            "\n\n|History:\nuser: turn 6"
        )
        tight = assemble_context(self.task(), history, "q", token_budget=tight_budget)
        assert tight.history_window == ("user: turn 6",)

    def test_history_omitted_when_nothing_fits(self):
        context = assemble_context(
            self.task(requirements=()),
            [("user", "a rather long opening line full of words")],
            "q",
            token_budget=MANDATORY + 3,
        )
        assert context.history_block == ""
        assert context.history_window == ()
        assert "History" not in context.serialized_text

    def test_salad_fits_budget_1000_with_all_five_steps(self, salad):
        context = assemble_context(salad, [], "how long do i soak the arame", 1000)
        assert context.included_step_indices == (1, 2, 3, 4, 5)
        assert context.ingredients_included
        assert context.serialized_text.startswith(
            "Title:\ncucumber, radish and seaweed salad\n\n|Description:\n noodlelike"
        )
        assert "soak arame in cold water until tender, about 15 minutes.;\n" in context.serialized_text
        assert context.token_count <= 1000


class TestPromptVariables:
    def test_maps_blocks_to_template_slots(self):
        context = assemble_context(
            make_task(), [("user", "hi")], "what now", token_budget=1000
        )
        variables = qa_prompt_variables(context, "what now")
        assert variables["Description"] == (
            "Title:\ntest task\n\n|Description:\n a task for tests."
        )
        assert variables["Ingredients"] == "|Ingredients:\n1 cup flour"
        assert variables["Steps"].startswith("|Steps:\nstep one.")
        assert variables["Steps"].endswith("|History:\nuser: hi")
        assert variables["Question"] == "what now"


class TestClassifyQuestion:
    @pytest.mark.parametrize(
        "question,expected",
        [
            ("Can the almonds be roasted or do they need to be raw?", "factoid"),
            ("Once the fill tubing is installed, what step comes next?", "navigation"),
            ("Would my kitchen windowsill be a good place for the onions?", "confirmation"),
            ("Does that mean basil grows best in the spring and summer?", "complex"),
            ("Why shouldn’t I mix in the sour cream at the same time?", "causal"),
            ("Sorry, what do I need to do?", "history"),
            ("How much cream cheese and other ingredients will I need?", "listing"),
        ],
    )
    def test_reference_exemplars(self, question, expected):
        assert classify_question(question) == expected

    @pytest.mark.parametrize(
        "question,expected",
        [
            ("what was that?", "history"),
            ("which step mentions the oven?", "navigation"),
            ("list all the tools I need", "listing"),
            ("should I grease the pan?", "confirmation"),
            ("what happens if I skip the rest?", "causal"),
            ("how long does the dough rest?", "factoid"),
        ],
    )
    def test_additional_phrasings(self, question, expected):
        assert classify_question(question) == expected

    def test_all_outputs_stay_in_taxonomy(self):
        for question in ("hm?", "tell me something", "or", "mean"):
            assert classify_question(question) in QUESTION_TYPES

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classify_question("  ")


class TestGrounding:
    CONTEXT = "Step 1: soak arame in cold water.\nStep 2: cook until golden brown."

    def test_exact_span(self):
        assert ground_span("cook until golden", self.CONTEXT) == (42, 17)
        start, length = ground_span("soak arame", self.CONTEXT)
        assert self.CONTEXT[start : start + length] == "soak arame"

    def test_first_occurrence_wins(self):
        context = "stir. stir. stir."
        assert ground_span("stir.", context) == (0, 5)

    def test_case_insensitive_retry_flags(self):
        result = locate_span("Cook Until Golden", self.CONTEXT)
        assert result == GroundingResult(True, 42, 17, case_mismatch=True)
        assert ground_span("Cook Until Golden", self.CONTEXT) == (42, 17)

    def test_not_grounded(self):
        with pytest.raises(NotGrounded):
            ground_span("microwave for 5 minutes", self.CONTEXT)
        assert locate_span("microwave", self.CONTEXT) == GroundingResult(grounded=False)

    def test_empty_answer_never_grounds(self):
        assert not locate_span("   ", self.CONTEXT).grounded

    def test_accepts_assembled_context(self, salad):
        context = assemble_context(salad, [], "how long do i soak the arame", 1000)
        start, length = ground_span("about 15 minutes", context)
        assert context.serialized_text[start : start + length] == "about 15 minutes"

    def test_whitespace_stripped_before_lookup(self):
        assert ground_span("  cook until golden  ", self.CONTEXT) == (42, 17)


class TestQAAnswerInvariant:
    def test_grounded_requires_span(self):
        with pytest.raises(ValueError):
            QAAnswer(text="x", grounded=True, span=None, category="factoid")

    def test_ungrounded_forbids_span(self):
        with pytest.raises(ValueError):
            QAAnswer(text="x", grounded=False, span=(0, 1), category="factoid")

    def test_unknown_category(self):
        with pytest.raises(ValueError):
            QAAnswer(text="x", grounded=False, span=None, category="opinion")


class TestAnswerQuestion:
    def ask(self, backend, mode="extractive", **kwargs):
        task = make_task(
            steps=("soak the beans overnight.", "cook until golden brown."),
            requirements=(("beans", "2 cups"),),
        )
        return answer_question(
            task, [], "how long do I cook the beans?", mode, backend, **kwargs
        )

    def test_extractive_grounds_and_canonicalizes_case(self):
        answer = self.ask(scripted("Cook Until Golden"))
        assert answer.grounded and answer.case_mismatch
        assert answer.text == "cook until golden"
        assert answer.span is not None and answer.span[1] == len("cook until golden")
        assert answer.category == "factoid"

    def test_extractive_exact_match_not_flagged(self):
        answer = self.ask(scripted("cook until golden"))
        assert answer.grounded and not answer.case_mismatch

    def test_extractive_ungrounded_returns_raw(self):
        answer = self.ask(scripted("microwave for 5 minutes"))
        assert not answer.grounded and answer.span is None
        assert answer.text == "microwave for 5 minutes"

    def test_abstractive_applies_capability_guard(self):
        answer = self.ask(
            scripted("Sure, I can play some smooth jazz while you cook."),
            mode="abstractive",
        )
        assert not answer.grounded
        assert "jazz" not in answer.text
        assert "can't play music" in answer.text

    def test_abstractive_clean_text_passes(self):
        answer = self.ask(scripted("Simmer them gently."), mode="abstractive")
        assert answer.text == "Simmer them gently."

    def test_timeout_raises(self):
        with pytest.raises(GenerationTimeout):
            self.ask(scripted("late", delay_ms=800), deadline_ms=100)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            self.ask(scripted("x"), mode="summarizing")
        assert ANSWER_MODES == ("extractive", "abstractive")
