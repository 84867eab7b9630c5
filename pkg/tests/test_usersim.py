import numpy as np
import pytest

from claribot.core import (
    ActKind,
    BotMove,
    Hypothesis,
    IntentToken,
    MoveKind,
    ProtocolError,
    SlotFill,
)
from claribot.usersim import UserSimulator, realize_utterance


def hyp_for(act, asr=0.9, nlu=0.9):
    slot_score = 1.0 if not act.intent.slot_types else 0.95
    return Hypothesis(
        words=act.words, intent=act.intent, slots=act.slots,
        asr_score=asr, nlu_intent_score=nlu, nlu_slot_score=slot_score,
    )


def wrong_hyp(act):
    other = IntentToken.intent("GetPlotIntent")
    return Hypothesis(
        words=act.words, intent=other, slots=(),
        asr_score=0.5, nlu_intent_score=0.5, nlu_slot_score=1.0,
    )


class TestRealizeUtterance:
    def test_director_template(self, movie_domain, rng):
        token = IntentToken.intent("GetDirectorIntent", ("movie_title",))
        act = realize_utterance(token, movie_domain.templates, movie_domain.lexicon, rng)
        assert act.act_kind is ActKind.REQUEST
        assert len(act.slots) == 1
        assert act.slots[0].slot_type == "movie_title"
        # the slot value appears verbatim in the realized words
        assert act.slots[0].value in " ".join(act.words)

    def test_slotless_single_template_is_verbatim(self, movie_domain, rng):
        from claribot.corpus import TemplateBank

        token = IntentToken.intent("GetRatingIntent")
        bank = TemplateBank({"GetRatingIntent": ("is it any good",)})
        act = realize_utterance(token, bank, movie_domain.lexicon, rng)
        assert act.words == ("is", "it", "any", "good")

    def test_templates_drawn_uniformly(self, movie_domain):
        from claribot.corpus import TemplateBank

        token = IntentToken.intent("GetRatingIntent")
        patterns = ("a b", "c d", "e f", "g h")
        bank = TemplateBank({"GetRatingIntent": patterns})
        rng = np.random.default_rng(17)
        n = 100_000
        counts = {p: 0 for p in patterns}
        for _ in range(n):
            act = realize_utterance(token, bank, movie_domain.lexicon, rng)
            counts[" ".join(act.words)] += 1
        for p in patterns:
            assert abs(counts[p] / n - 0.25) < 0.01

    def test_special_tokens_rejected(self, movie_domain, rng):
        with pytest.raises(ValueError):
            realize_utterance(IntentToken.start(), movie_domain.templates, movie_domain.lexicon, rng)


class TestClarifications:
    def _opening(self, user_sim, seed=0):
        state = user_sim.new_state(seed)
        act = user_sim.next_user_act(state, None)
        assert act.act_kind is ActKind.REQUEST
        return state, act

    def test_confirm_matching_hypothesis_gets_yes(self, user_sim):
        state, act = self._opening(user_sim)
        answer = user_sim.next_user_act(state, BotMove(MoveKind.CONFIRM, hyp_for(act)))
        assert answer.act_kind is ActKind.CONFIRM_YES
        assert answer.words == ("yes",)

    def test_confirm_wrong_hypothesis_gets_no(self, user_sim):
        state, act = self._opening(user_sim)
        answer = user_sim.next_user_act(state, BotMove(MoveKind.CONFIRM, wrong_hyp(act)))
        assert answer.act_kind is ActKind.CONFIRM_NO
        assert answer.words == ("no",)

    def test_elicit_repeats_words_exactly(self, user_sim):
        state, act = self._opening(user_sim)
        for _ in range(3):
            repeat = user_sim.next_user_act(state, BotMove(MoveKind.ELICIT))
            assert repeat.act_kind is ActKind.REPEAT_FOR_ELICIT
            assert repeat.words == act.words

    def test_budget_exhaustion_terminates(self, user_sim):
        state, act = self._opening(user_sim)
        for _ in range(user_sim.repeat_budget):
            answer = user_sim.next_user_act(state, BotMove(MoveKind.ELICIT))
            assert answer.act_kind is ActKind.REPEAT_FOR_ELICIT
        final = user_sim.next_user_act(state, BotMove(MoveKind.ELICIT))
        assert final.act_kind is ActKind.TERMINATE

    def test_acting_after_terminate_is_a_protocol_error(self, user_sim):
        state, act = self._opening(user_sim)
        for _ in range(user_sim.repeat_budget + 1):
            user_sim.next_user_act(state, BotMove(MoveKind.ELICIT))
        with pytest.raises(ProtocolError):
            user_sim.next_user_act(state, BotMove(MoveKind.ELICIT))

    def test_lm_advances_only_on_execute(self, user_sim):
        state, act = self._opening(user_sim)
        depth = len(state.history)
        user_sim.next_user_act(state, BotMove(MoveKind.CONFIRM, hyp_for(act)))
        user_sim.next_user_act(state, BotMove(MoveKind.ELICIT))
        assert len(state.history) == depth
        nxt = user_sim.next_user_act(state, BotMove(MoveKind.EXECUTE, hyp_for(act)))
        assert nxt.act_kind in (ActKind.REQUEST, ActKind.TERMINATE)
        assert len(state.history) == depth + 1


class TestPairedDeterminism:
    def test_user_stream_depends_only_on_move_kinds(self, user_sim):
        """Two agents that emit the same move kinds see identical user-side
        behavior, regardless of hypothesis content."""

        def drive(hyp_factory, seed=123):
            state = user_sim.new_state(seed)
            trace = []
            act = user_sim.next_user_act(state, None)
            trace.append(act.words)
            for _ in range(6):
                if act.act_kind is ActKind.TERMINATE:
                    break
                user_sim.observe_response(state, "the answer")
                act2 = user_sim.next_user_act(
                    state, BotMove(MoveKind.EXECUTE, hyp_factory(act))
                )
                trace.append(act2.words)
                act = act2
            return trace

        assert drive(hyp_for) == drive(wrong_hyp)

    def test_same_seed_same_episode(self, user_sim):
        def roll(seed):
            state = user_sim.new_state(seed)
            acts = [user_sim.next_user_act(state, None)]
            while acts[-1].act_kind is not ActKind.TERMINATE and len(acts) < 20:
                user_sim.observe_response(state, "answer text")
                acts.append(
                    user_sim.next_user_act(state, BotMove(MoveKind.EXECUTE, hyp_for(acts[-1])))
                )
            return [(a.act_kind.value, a.words) for a in acts]

        assert roll(7) == roll(7)

    def test_sampled_requests_have_positive_probability_under_the_lm(
        self, user_sim, rnn_model, vocab
    ):
        state = user_sim.new_state(11)
        act = user_sim.next_user_act(state, None)
        seen = [act.intent]
        for _ in range(10):
            if act.act_kind is ActKind.TERMINATE:
                break
            user_sim.observe_response(state, "answer")
            act = user_sim.next_user_act(state, BotMove(MoveKind.EXECUTE, hyp_for(act)))
            seen.append(act.intent)
        history = [vocab.token(0)]
        responses = [""]
        for token in seen:
            dist = rnn_model.next_dist(history, responses)
            name = "End" if token.kind.name == "END" else token.canonical()
            assert dist[vocab.index[name]] > 0.0
            history.append(token)
            responses.append("answer")
