from pathlib import Path

import pytest

from rpmem import configs, recipes
from rpmem.configs import Arity, Primitive, ServerConfig, enumerate_configs, select_recipe
from rpmem.engine import Transport
from rpmem.memory import PersistenceDomain, Region
from rpmem.recipes import canonical_steps, render, validate_recipe

SNAPSHOT = Path(__file__).parent / "data" / "catalog_snapshot.txt"


def test_twelve_distinct_configs_in_taxonomy_order():
    cfgs = enumerate_configs()
    assert len(cfgs) == 12
    assert len(set(cfgs)) == 12
    assert cfgs[0] == ServerConfig(PersistenceDomain.DMP, True, Region.DRAM)
    assert cfgs[-1] == ServerConfig(PersistenceDomain.WSP, False, Region.PM)
    # domain-major, DDIO on before off, DRAM before PM
    assert [c.domain for c in cfgs[:4]] == [PersistenceDomain.DMP] * 4
    assert [c.ddio for c in cfgs[:4]] == [True, True, False, False]


def test_selection_is_total_over_the_matrix():
    count = 0
    for transport in Transport:
        for base in enumerate_configs():
            config = ServerConfig(base.domain, base.ddio, base.rqwrb_region, transport)
            for primitive in Primitive:
                for arity in Arity:
                    recipe = select_recipe(config, primitive, arity)
                    assert validate_recipe(recipe) == [], recipe.recipe_id
                    count += 1
    assert count == 144  # 72 scenarios x 2 transports


def test_dmp_ddio_write_singleton_is_the_message_exchange():
    recipe = select_recipe(enumerate_configs()[0], Primitive.WRITE, Arity.SINGLETON)
    assert render(recipe) == [
        "Rq Write(a)",
        "Rq Send(&a)",
        "Rsp Receive(&a)",
        "Rsp flush(&a)",
        "Rsp Send(ack)",
        "Rq Receive(ack)",
        "ASSERT-PERSISTED(a)",
    ]


def test_wsp_write_singleton_waits_on_its_own_completion():
    config = ServerConfig(PersistenceDomain.WSP, True, Region.DRAM)
    recipe = select_recipe(config, Primitive.WRITE, Arity.SINGLETON)
    assert render(recipe) == ["Rq Write(a)", "Rq Comp_Write(a)", "ASSERT-PERSISTED(a)"]


def test_dmp_noddio_write_compound_pipelines_through_atomic():
    config = ServerConfig(PersistenceDomain.DMP, False, Region.DRAM)
    recipe = select_recipe(config, Primitive.WRITE, Arity.COMPOUND)
    assert render(recipe) == [
        "Rq Write(a)",
        "Rq Flush",
        "Rq Write_atomic(b)",
        "Rq Flush",
        "Rq Comp_Flush",
        "ASSERT-PERSISTED(a,b)",
    ]


def test_mhp_send_dram_skips_responder_flush():
    config = ServerConfig(PersistenceDomain.MHP, True, Region.DRAM)
    recipe = select_recipe(config, Primitive.SEND, Arity.SINGLETON)
    lines = render(recipe)
    assert "Rsp copy(a)" in lines and "Rsp flush(&a)" not in lines


def test_pm_rqwrb_send_recipes_allow_record_recovery():
    config = ServerConfig(PersistenceDomain.MHP, False, Region.PM)
    recipe = select_recipe(config, Primitive.SEND, Arity.SINGLETON)
    assert recipe.record_recovery_ok
    assert render(recipe) == ["Rq Send(a)", "Rq Flush", "Rq Comp_Flush", "ASSERT-PERSISTED(a)"]
    dram = select_recipe(
        ServerConfig(PersistenceDomain.MHP, False, Region.DRAM), Primitive.SEND, Arity.SINGLETON
    )
    assert not dram.record_recovery_ok


def test_iwarp_wsp_cells_fall_back_to_mhp():
    for ddio in (True, False):
        for region in Region:
            for primitive in Primitive:
                for arity in Arity:
                    wsp_iwarp = select_recipe(
                        ServerConfig(PersistenceDomain.WSP, ddio, region, Transport.IWARP),
                        primitive, arity,
                    )
                    mhp = select_recipe(
                        ServerConfig(PersistenceDomain.MHP, ddio, region), primitive, arity
                    )
                    assert canonical_steps(wsp_iwarp) == canonical_steps(mhp)


def test_iwarp_leaves_non_wsp_cells_alone():
    for domain in (PersistenceDomain.DMP, PersistenceDomain.MHP):
        config = ServerConfig(domain, True, Region.DRAM, Transport.IWARP)
        ib = ServerConfig(domain, True, Region.DRAM)
        assert select_recipe(config, Primitive.WRITE, Arity.SINGLETON) is select_recipe(
            ib, Primitive.WRITE, Arity.SINGLETON
        )


def test_send_exchange_variant_only_for_dmp_noddio_write():
    config = ServerConfig(PersistenceDomain.DMP, False, Region.DRAM)
    variant = select_recipe(config, Primitive.WRITE, Arity.SINGLETON, variant="send-exchange")
    assert "Rq Send(&a)" in render(variant)
    with pytest.raises(KeyError):
        select_recipe(config, Primitive.SEND, Arity.SINGLETON, variant="send-exchange")
    with pytest.raises(KeyError):
        select_recipe(config, Primitive.WRITE, Arity.SINGLETON, variant="bogus")


def test_catalog_snapshot():
    lines = []
    for config, primitive, arity in configs.all_scenarios():
        recipe = select_recipe(config, primitive, arity)
        lines.append(f"== {config.label}/{primitive.value}/{arity.value} -> {recipe.recipe_id}")
        lines.extend("  " + l for l in render(recipe))
    for region in Region.DRAM, Region.PM:
        for arity in Arity:
            cfg = ServerConfig(PersistenceDomain.DMP, False, region)
            recipe = select_recipe(cfg, Primitive.WRITE, arity, variant="send-exchange")
            lines.append(f"== {cfg.label}/write/{arity.value}@send-exchange -> {recipe.recipe_id}")
            lines.extend("  " + l for l in render(recipe))
    assert "\n".join(lines) + "\n" == SNAPSHOT.read_text()
