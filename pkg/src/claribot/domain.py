"""Default movie-chat domain: intents, templates, lexicon, and context rules.

The generator's context rules are second-order on purpose: what the user asks
after e.g. a rating question depends strongly on which kind of recommendation
preceded it, which a bigram over intents cannot capture but a recurrent model
can. Bot responses are one fixed template per intent with slot echo.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import Hypothesis, IntentToken, SlotFill
from .corpus import GeneratorSpec, IntentVocab, Lexicon, TemplateBank

SLOT_TYPES = ("genre", "movie_title", "person_name")

GG = "GetGenreMoviesIntent+genre"
GP = "GetPopularMoviesIntent"
GA = "GetAnotherMovieIntent"
NA = "GetNextActorIntent"
RT = "GetRatingIntent"
PL = "GetPlotIntent"
DU = "GetDurationIntent"
DI = "GetDirectorIntent+movie_title"
GO = "GetGoofsIntent+movie_title"
AM = "GetActorMoviesIntent+person_name"
FG = "GetFavoriteGenreIntent"

INTENT_NAMES = (GG, GP, GA, NA, RT, PL, DU, DI, GO, AM, FG)

# Each intent mixes terse realizations with filler-heavy ones. Under word
# noise the fillers absorb corruption without hurting understanding, so the
# channel produces both "low score but fine" and "low score and ruined"
# hypotheses, which is where policies earn their keep.
TEMPLATES: dict[str, tuple[str, ...]] = {
    GG: (
        "{genre} movies",
        "a {genre} movie",
        "could you please find me a nice {genre} movie",
        "hey i would really like to watch a {genre} film",
    ),
    GP: (
        "popular movies",
        "recommend a popular movie",
        "could you please suggest something popular for me",
        "hey what movies are really trending right now",
    ),
    GA: (
        "something else",
        "different movie",
        "could you please look for another option for me",
        "hey show me something else please",
    ),
    NA: (
        "other cast",
        "who else is in it",
        "could you please tell me who else stars in it",
    ),
    RT: (
        "movie rating",
        "is it good",
        "could you please tell me how it is rated",
        "hey does it actually have good reviews",
    ),
    PL: (
        "story summary",
        "what is it about",
        "could you please tell me the whole plot",
    ),
    DU: (
        "running time",
        "how long is it",
        "could you please tell me the movie length",
    ),
    DI: (
        "{movie_title} director",
        "who directed {movie_title}",
        "could you please tell me who directed {movie_title}",
    ),
    GO: (
        "blooper in {movie_title}",
        "goof from {movie_title}",
        "could you please give me a mistake from {movie_title}",
    ),
    AM: (
        "{person_name} movies",
        "films starring {person_name}",
        "could you please find me movies with {person_name}",
    ),
    FG: (
        "my favorite genre",
        "which genre do i like",
        "could you please tell me my favorite genre",
    ),
}

LEXICON: dict[str, tuple[str, ...]] = {
    "genre": (
        "action",
        "comedy",
        "drama",
        "horror",
        "romance",
        "science fiction",
        "thriller",
        "documentary",
    ),
    "movie_title": (
        "arrival",
        "inception",
        "moana",
        "john wick",
        "interstellar",
        "coco",
        "frozen",
        "gravity",
        "jaws",
        "alien",
        "rocky",
        "dune",
        "her",
        "cars",
        "the martian",
        "blade runner",
    ),
    "person_name": (
        "tom hanks",
        "amy adams",
        "jeremy renner",
        "emma stone",
        "ryan gosling",
        "denzel washington",
        "meryl streep",
        "brad pitt",
        "scarlett johansson",
        "morgan freeman",
        "tom cruise",
        "natalie portman",
    ),
}

BOT_RESPONSES: dict[str, str] = {
    GG: "i recommend a great {genre} film you can ask who stars in it",
    GP: "a popular choice this week is a new science fiction film",
    GA: "here is another option you might enjoy",
    NA: "the second lead was played by a well known actor",
    RT: "it is rated 8.4 on imdb based on about 70000 votes",
    PL: "here is a short summary of the plot",
    DU: "the movie duration is 1 hour and 42 minutes",
    DI: "the director of {movie_title} is a celebrated filmmaker",
    GO: "here is an interesting goof from {movie_title}",
    AM: "a great film starring {person_name} is playing nearby",
    FG: "your favorite genre so far is science fiction",
}

CONFIRM_GLOSSES: dict[str, str] = {
    GG: "do you want {genre} movies",
    GP: "do you want popular movies",
    GA: "do you want a different movie",
    NA: "do you want to know who else is in it",
    RT: "do you want the rating",
    PL: "do you want the plot",
    DU: "do you want the running time",
    DI: "do you want the director of {movie_title}",
    GO: "do you want a goof from {movie_title}",
    AM: "do you want movies with {person_name}",
    FG: "do you want your favorite genre",
}

UNKNOWN_RESPONSE = "i do not know how to handle that yet"
FAREWELL = "thank you for using the movie bot"
ELICIT_PROMPT = "sorry could you say that again"
CONFIRM_FALLBACK = "did you mean that"

STOP_UTTERANCES = ("thank you", "stop", "cancel", "that is enough", "goodbye")

# Context rules. The 1-token keys are fallbacks; the 2-token keys carry the
# second-order structure: which follow-up comes after e.g. a rating question
# depends strongly on what kind of request preceded it, and the preferred
# successor rotates with the predecessor so the first-order marginals stay
# flat. "Start" may appear inside 2-token keys for opening requests.
CONTEXT_RULES: dict[tuple[str, ...], dict[str, float]] = {
    ("Start",): {GG: 0.32, GP: 0.22, AM: 0.14, DI: 0.12, GO: 0.06, FG: 0.14},
    # First-order fallbacks (rarely hit; every reachable pair has its own rule).
    (GG,): {RT: 0.25, NA: 0.20, PL: 0.25, DU: 0.12, GA: 0.12, "End": 0.06},
    (GP,): {RT: 0.25, NA: 0.20, PL: 0.25, DU: 0.12, GA: 0.12, "End": 0.06},
    (GA,): {RT: 0.28, PL: 0.24, NA: 0.18, DU: 0.14, "End": 0.16},
    (AM,): {RT: 0.30, NA: 0.26, PL: 0.22, GA: 0.08, "End": 0.14},
    (NA,): {RT: 0.30, PL: 0.28, GA: 0.18, "End": 0.24},
    (RT,): {PL: 0.26, GA: 0.22, DU: 0.16, NA: 0.10, "End": 0.26},
    (PL,): {RT: 0.30, GA: 0.22, DU: 0.16, "End": 0.32},
    (DU,): {"End": 0.38, GA: 0.32, RT: 0.30},
    (DI,): {GO: 0.30, AM: 0.24, GG: 0.22, "End": 0.24},
    (GO,): {"End": 0.36, GG: 0.30, GP: 0.34},
    (FG,): {GG: 0.62, GP: 0.30, "End": 0.08},
    # Opening requests get their own follow-up profile.
    ("Start", GG): {NA: 0.50, RT: 0.30, PL: 0.20},
    ("Start", GP): {RT: 0.55, NA: 0.30, "End": 0.15},
    ("Start", AM): {RT: 0.50, NA: 0.35, "End": 0.15},
    ("Start", DI): {GO: 0.50, AM: 0.30, GG: 0.20},
    ("Start", GO): {GG: 0.50, GP: 0.35, "End": 0.15},
    # Rating questions.
    (GG, RT): {PL: 0.70, GA: 0.20, "End": 0.10},
    (GP, RT): {DU: 0.70, NA: 0.20, "End": 0.10},
    (AM, RT): {NA: 0.70, PL: 0.20, "End": 0.10},
    (GA, RT): {"End": 0.60, GA: 0.25, PL: 0.15},
    (NA, RT): {PL: 0.65, "End": 0.25, GA: 0.10},
    (DU, RT): {GA: 0.60, "End": 0.40},
    (PL, RT): {"End": 0.65, GA: 0.25, DU: 0.10},
    # Plot questions.
    (GG, PL): {RT: 0.70, DU: 0.20, GA: 0.10},
    (GP, PL): {"End": 0.55, NA: 0.35, GA: 0.10},
    (AM, PL): {RT: 0.65, "End": 0.35},
    (GA, PL): {NA: 0.60, "End": 0.40},
    (NA, PL): {DU: 0.60, RT: 0.25, "End": 0.15},
    (RT, PL): {"End": 0.60, DU: 0.30, GA: 0.10},
    # Cast questions.
    (GG, NA): {RT: 0.70, PL: 0.20, "End": 0.10},
    (GP, NA): {PL: 0.65, "End": 0.25, GA: 0.10},
    (AM, NA): {RT: 0.55, GA: 0.30, "End": 0.15},
    (GA, NA): {PL: 0.60, RT: 0.30, "End": 0.10},
    (RT, NA): {GA: 0.55, "End": 0.45},
    (PL, NA): {RT: 0.50, GA: 0.30, "End": 0.20},
    # Duration questions.
    (GG, DU): {GA: 0.60, RT: 0.25, "End": 0.15},
    (GP, DU): {"End": 0.60, GA: 0.40},
    (RT, DU): {"End": 0.70, GA: 0.30},
    (PL, DU): {RT: 0.55, "End": 0.45},
    (GA, DU): {"End": 0.50, RT: 0.50},
    # Asking for a different movie.
    (RT, GA): {PL: 0.65, NA: 0.20, "End": 0.15},
    (PL, GA): {NA: 0.60, RT: 0.30, "End": 0.10},
    (DU, GA): {RT: 0.60, PL: 0.30, "End": 0.10},
    (NA, GA): {RT: 0.55, PL: 0.30, "End": 0.15},
    (GG, GA): {RT: 0.60, DU: 0.25, "End": 0.15},
    (GP, GA): {NA: 0.55, PL: 0.30, "End": 0.15},
    (AM, GA): {PL: 0.50, RT: 0.35, "End": 0.15},
    (GA, GA): {"End": 0.60, RT: 0.40},
    # Fresh top-level requests reached mid-dialog.
    (FG, GG): {RT: 0.70, PL: 0.20, "End": 0.10},
    (DI, GG): {NA: 0.65, PL: 0.25, "End": 0.10},
    (GO, GG): {DU: 0.60, RT: 0.30, "End": 0.10},
    (FG, GP): {PL: 0.60, RT: 0.30, "End": 0.10},
    (GO, GP): {NA: 0.55, DU: 0.30, "End": 0.15},
    (DI, AM): {PL: 0.55, NA: 0.30, "End": 0.15},
    (DI, GO): {"End": 0.55, GG: 0.45},
}


@dataclass
class Domain:
    """Bundle of everything that defines the dialog world."""

    generator: GeneratorSpec
    templates: TemplateBank
    lexicon: Lexicon
    responses: dict[str, str]
    confirm_glosses: dict[str, str] = field(default_factory=dict)
    stop_utterances: tuple[str, ...] = STOP_UTTERANCES
    farewell: str = FAREWELL
    unknown_response: str = UNKNOWN_RESPONSE
    elicit_prompt: str = ELICIT_PROMPT

    @property
    def slot_types(self) -> tuple[str, ...]:
        return tuple(sorted(self.lexicon.values))

    def vocab(self) -> IntentVocab:
        return IntentVocab.from_intents(self.generator.tokens)

    def _render(self, pattern: str, slots: tuple[SlotFill, ...]) -> str:
        text = pattern
        for fill in slots:
            text = text.replace("{" + fill.slot_type + "}", fill.value)
        return text

    def bot_response_text(self, token: IntentToken | None, slots: tuple[SlotFill, ...] = ()) -> str:
        if token is None:
            return self.unknown_response
        pattern = self.responses.get(token.canonical())
        if pattern is None:
            return self.unknown_response
        return self._render(pattern, slots)

    def confirm_text(self, hyp: Hypothesis) -> str:
        if hyp.intent is None:
            return CONFIRM_FALLBACK
        pattern = self.confirm_glosses.get(hyp.intent.canonical(), CONFIRM_FALLBACK)
        return self._render(pattern, hyp.slots)

    def word_universe(self) -> tuple[str, ...]:
        """Every word a user utterance can contain, for the channel vocabulary."""
        words: set[str] = set()
        for patterns in self.templates.patterns.values():
            for pattern in patterns:
                for word in pattern.split():
                    if not word.startswith("{"):
                        words.add(word)
        for values in self.lexicon.values.values():
            for value in values:
                words.update(value.split())
        for utterance in self.stop_utterances:
            words.update(utterance.split())
        return tuple(sorted(words))


def default_domain() -> Domain:
    tokens = tuple(IntentToken.parse(name) for name in INTENT_NAMES)
    generator = GeneratorSpec(
        tokens=tokens, rules=CONTEXT_RULES, min_turns=1, max_turns=12, end_scale=0.55
    )
    domain = Domain(
        generator=generator,
        templates=TemplateBank({k: tuple(v) for k, v in TEMPLATES.items()}),
        lexicon=Lexicon({k: tuple(v) for k, v in LEXICON.items()}),
        responses=dict(BOT_RESPONSES),
        confirm_glosses=dict(CONFIRM_GLOSSES),
    )
    domain.templates.validate(tokens)
    domain.generator.validate()
    return domain
